"""
Grid functions and the staggered difference / average calculus.

Layout (all numpy float arrays, first index x, second index y):
    BulkField        (N, N+1)   i = 0..N-1 periodic, j = 0..N
    BulkFieldGhost   (N, N+3)   j = -1..N+1 (column 0 is the bottom ghost row)
    EdgeFieldX       (N, N+1)   value at (i+1/2, j)
    EdgeFieldY       (N, N)     value at (i, j+1/2), j = 0..N-1
    EdgeFieldY ext.  (N, N+2)   j = -1..N
    BoundaryField    (N,)       bottom or top trace
Periodic wrap in x is done with np.roll; no duplicated periodic column is stored.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from errors import CompatibilityError, ConfigError

log = logging.getLogger(__name__)

SIDES = ('bottom', 'top')


# ═══════════════════════════════════════════════════════════
# GRID PARAMETERS
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class GridParams:
    N: int

    def __post_init__(self):
        if not isinstance(self.N, (int, np.integer)) or isinstance(self.N, bool):
            raise ConfigError(f'N must be an integer, got {self.N!r}')
        if self.N < 4 or self.N % 2:
            raise ConfigError(f'N must be even and >= 4, got {self.N}')

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h


def grid_of(f: np.ndarray) -> GridParams:
    """Recover the grid from a bulk or boundary field's shape."""
    return GridParams(int(f.shape[0]))


def node_weights(N: int) -> np.ndarray:
    """Trapezoid weights w_j, 1/2 on the two physical boundary rows."""
    w = np.ones(N + 1)
    w[0] = w[-1] = 0.5
    return w


def side_row(N: int, side: str) -> int:
    if side == 'bottom':
        return 0
    if side == 'top':
        return N
    raise CompatibilityError(f'unknown side {side!r}, expected one of {SIDES}')


def trace(f: np.ndarray, side: str) -> np.ndarray:
    return f[:, side_row(f.shape[0], side)]


def _require_bulk(f: np.ndarray, name: str = 'field') -> int:
    if f.ndim != 2 or f.shape[1] != f.shape[0] + 1:
        raise CompatibilityError(f'{name} must have shape (N, N+1), got {f.shape}')
    return f.shape[0]


def _require_ghost(f: np.ndarray, name: str = 'field') -> int:
    if f.ndim != 2 or f.shape[1] != f.shape[0] + 3:
        raise CompatibilityError(f'{name} must carry ghost rows, shape (N, N+3), got {f.shape}')
    return f.shape[0]


# ═══════════════════════════════════════════════════════════
# GHOST EXTENSION
# ═══════════════════════════════════════════════════════════
def attach_ghosts(f: np.ndarray, bottom: np.ndarray, top: np.ndarray) -> np.ndarray:
    N = _require_bulk(f)
    out = np.empty((N, N + 3))
    out[:, 0] = bottom
    out[:, 1:-1] = f
    out[:, -1] = top
    return out


def reflect_ghosts(f: np.ndarray) -> np.ndarray:
    """Even reflection across both physical rows (homogeneous Neumann)."""
    _require_bulk(f)
    return attach_ghosts(f, f[:, 1], f[:, -2])


def physical(fg: np.ndarray) -> np.ndarray:
    _require_ghost(fg)
    return fg[:, 1:-1]


# ═══════════════════════════════════════════════════════════
# FACE / CELL OPERATORS
# ═══════════════════════════════════════════════════════════
def face_ops_x(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """A_x f and D_x f on (i+1/2, j); works for bulk and boundary fields alike."""
    h = 1.0 / f.shape[0]
    right = np.roll(f, -1, axis=0)
    return 0.5 * (right + f), (right - f) / h


def face_ops_y(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """A_y f and D_y f on (i, j+1/2) for j = -1..N (extended edge range)."""
    N = _require_ghost(f)
    h = 1.0 / N
    upper, lower = f[:, 1:], f[:, :-1]
    return 0.5 * (upper + lower), (upper - lower) / h


def cell_ops(fe: np.ndarray, axis: str) -> Tuple[np.ndarray, np.ndarray]:
    """a f and d f back on the nodes (i, j), j = 0..N."""
    N = fe.shape[0]
    h = 1.0 / N
    if axis == 'x':
        left = np.roll(fe, 1, axis=0)
        return 0.5 * (fe + left), (fe - left) / h
    if axis == 'y':
        if fe.ndim != 2 or fe.shape[1] != N + 2:
            raise CompatibilityError(
                f'y-edge field needs the extended range j=-1..N, shape (N, N+2), got {fe.shape}')
        upper, lower = fe[:, 1:], fe[:, :-1]
        return 0.5 * (upper + lower), (upper - lower) / h
    raise CompatibilityError(f"axis must be 'x' or 'y', got {axis!r}")


def divergence(g: np.ndarray, fvec: Tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Discrete divergence of g*f: d_x(A_x g f^x) + d_y(A_y g f^y)."""
    N = _require_ghost(g, 'g')
    fx, fy = fvec
    if fx.shape != (N, N + 1):
        raise CompatibilityError(f'x-edge component must have shape {(N, N + 1)}, got {fx.shape}')
    if fy.shape != (N, N + 2):
        raise CompatibilityError(f'y-edge component must have shape {(N, N + 2)}, got {fy.shape}')
    ax_g, _ = face_ops_x(g[:, 1:-1])
    ay_g, _ = face_ops_y(g)
    _, dx = cell_ops(ax_g * fx, 'x')
    _, dy = cell_ops(ay_g * fy, 'y')
    return dx + dy


def gradient(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(D_x f, D_y f) with D_y on the extended range; f carries ghosts."""
    _, dx = face_ops_x(physical(f))
    _, dy = face_ops_y(f)
    return dx, dy


def laplacian_5pt(phi: np.ndarray) -> np.ndarray:
    N = _require_ghost(phi)
    h2 = (1.0 / N) ** 2
    c = phi[:, 1:-1]
    return (np.roll(c, -1, axis=0) + np.roll(c, 1, axis=0)
            + phi[:, 2:] + phi[:, :-2] - 4.0 * c) / h2


def laplacian_gamma(g: np.ndarray) -> np.ndarray:
    h2 = (1.0 / g.shape[0]) ** 2
    return (np.roll(g, -1) - 2.0 * g + np.roll(g, 1)) / h2


def boundary_normal_derivative(phi: np.ndarray, side: str) -> np.ndarray:
    """Centered y-difference across a physical row, using its ghost."""
    N = _require_ghost(phi)
    h = 1.0 / N
    if side == 'bottom':
        return (phi[:, 2] - phi[:, 0]) / (2.0 * h)
    if side == 'top':
        return (phi[:, -1] - phi[:, -3]) / (2.0 * h)
    raise CompatibilityError(f'unknown side {side!r}, expected one of {SIDES}')


# ═══════════════════════════════════════════════════════════
# INNER PRODUCTS AND NORMS
# ═══════════════════════════════════════════════════════════
def inner_omega(f: np.ndarray, g) -> float:
    """Weighted bulk product; g may be a scalar (e.g. 1 for the bulk integral)."""
    N = _require_bulk(f)
    if np.ndim(g) and np.shape(g) != f.shape:
        raise CompatibilityError(f'dimension mismatch: {f.shape} vs {np.shape(g)}')
    row_sums = (f * g).sum(axis=0)
    return float((1.0 / N) ** 2 * np.dot(node_weights(N), row_sums))


def inner_gamma(f: np.ndarray, g) -> float:
    if f.ndim != 1 or (np.ndim(g) and np.shape(g) != f.shape):
        raise CompatibilityError(f'dimension mismatch: {f.shape} vs {np.shape(g)}')
    return float((f * g).sum() / f.shape[0])


def norm_omega(f: np.ndarray) -> float:
    return float(np.sqrt(inner_omega(f, f)))


def norm_gamma(f: np.ndarray) -> float:
    return float(np.sqrt(inner_gamma(f, f)))


def _edge_inner_y(fy: np.ndarray, gy: np.ndarray) -> float:
    N = fy.shape[0]
    if fy.shape[1] == N + 2:
        fy, gy = fy[:, 1:-1], gy[:, 1:-1]
    if fy.shape != (N, N) or gy.shape != (N, N):
        raise CompatibilityError(f'y-edge range mismatch: {fy.shape} vs {gy.shape}')
    # no boundary weights on y-edges, j = 0..N-1
    return float((1.0 / N) ** 2 * (fy * gy).sum(axis=0).sum())


def edge_inner(fvec: Tuple[np.ndarray, np.ndarray], gvec: Tuple[np.ndarray, np.ndarray]) -> float:
    fx, fy = fvec
    gx, gy = gvec
    if fx.shape != gx.shape:
        raise CompatibilityError(f'x-edge range mismatch: {fx.shape} vs {gx.shape}')
    avg, _ = cell_ops(fx * gx, 'x')
    return inner_omega(avg, 1.0) + _edge_inner_y(fy, gy)


def grad_norm_sq(f: np.ndarray) -> float:
    """||grad_h f||^2 of a bulk field; needs physical rows only."""
    N = _require_bulk(f)
    _, dx = face_ops_x(f)
    dy = np.diff(f, axis=1) * N
    return edge_inner((dx, dy), (dx, dy))


def grad_norm_gamma_sq(g: np.ndarray) -> float:
    _, dx = face_ops_x(g)
    return inner_gamma(dx, dx)
