"""
The ghost-free Neumann operator L_h, its inverse on mean-zero fields, the
boundary inverse (-Delta_h^x)^{-1}, -1 products, and the bulk/boundary mass split.

Inverses diagonalize the periodic x-direction with a real FFT. Each x-mode of
L_h is then a tridiagonal (N+1)x(N+1) system in y, solved with a banded LU.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from errors import CompatibilityError, SolverError
from grid import (_require_bulk, inner_gamma, inner_omega, laplacian_5pt,
                  laplacian_gamma, node_weights, norm_omega, reflect_ghosts)

log = logging.getLogger(__name__)

MEAN_ZERO_TOL = 1e-12


# ═══════════════════════════════════════════════════════════
# L_h
# ═══════════════════════════════════════════════════════════
def apply_Lh(phi: np.ndarray) -> np.ndarray:
    """-Delta_h with Neumann reflection folded into the boundary rows."""
    return -laplacian_5pt(reflect_ghosts(phi))


def neg_lap_gamma(g: np.ndarray) -> np.ndarray:
    return -laplacian_gamma(g)


def mode_eigenvalues(N: int) -> np.ndarray:
    """Eigenvalues of -Delta_h^x for the rfft modes m = 0..N/2."""
    m = np.arange(N // 2 + 1)
    return (4.0 * N * N) * np.sin(np.pi * m / N) ** 2


def y_operator(N: int) -> np.ndarray:
    """Dense y-part of L_h (Neumann second difference, reflected boundary rows)."""
    h2 = (1.0 / N) ** 2
    ly = (np.diag(np.full(N + 1, 2.0)) - np.diag(np.ones(N), 1) - np.diag(np.ones(N), -1))
    ly[0, 1] = -2.0
    ly[N, N - 1] = -2.0
    return ly / h2


def assemble_Lh(N: int) -> sp.csr_matrix:
    """Sparse L_h on the C-order flattening of an (N, N+1) field."""
    h2 = (1.0 / N) ** 2
    gx = sp.diags([np.full(N, 2.0), -np.ones(N - 1), -np.ones(N - 1)], [0, 1, -1], format='lil')
    gx[0, N - 1] = -1.0
    gx[N - 1, 0] = -1.0
    gx = gx.tocsr() / h2
    ly = sp.csr_matrix(y_operator(N))
    return (sp.kron(gx, sp.identity(N + 1)) + sp.kron(sp.identity(N), ly)).tocsr()


@lru_cache(maxsize=32)
def _mode_bands(N: int) -> Tuple[np.ndarray, ...]:
    """Banded (1,1) storage of g_m + L_y for every rfft mode; mode 0 pinned at u_0 = 0."""
    h2 = (1.0 / N) ** 2
    base = np.zeros((3, N + 1))
    base[0, 2:] = -1.0 / h2
    base[0, 1] = -2.0 / h2
    base[1, :] = 2.0 / h2
    base[2, :N - 1] = -1.0 / h2
    base[2, N - 1] = -2.0 / h2
    bands = []
    for gm in mode_eigenvalues(N):
        ab = base.copy()
        ab[1, :] += gm
        bands.append(ab)
    bands[0][1, 0] = 1.0
    bands[0][0, 1] = 0.0
    for ab in bands:
        ab.setflags(write=False)
    return tuple(bands)


def weighted_mean(f: np.ndarray) -> float:
    return inner_omega(f, 1.0)


def remove_mean(f: np.ndarray) -> np.ndarray:
    return f - weighted_mean(f)


def solve_Lh_unchecked(r: np.ndarray) -> np.ndarray:
    """L_h^{-1} P r: projects r to weighted mean zero, solves, returns a mean-zero field."""
    N = _require_bulk(r, 'r')
    rhat = np.fft.rfft(remove_mean(r), axis=0)
    rhat[0, 0] = 0.0
    uhat = np.empty_like(rhat)
    for m, ab in enumerate(_mode_bands(N)):
        uhat[m] = scipy.linalg.solve_banded((1, 1), ab, rhat[m], check_finite=False)
    u = np.fft.irfft(uhat, n=N, axis=0)
    return remove_mean(u)


def _check_mean_zero(value: float, scale: float, what: str):
    if abs(value) > MEAN_ZERO_TOL * max(scale, np.finfo(float).tiny):
        raise CompatibilityError(f'{what} must have zero mean', {'mean': value, 'norm': scale})


def solve_Lh(r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Mean-zero psi with L_h psi = r; r must have weighted mean zero."""
    _check_mean_zero(weighted_mean(r), norm_omega(r), 'right-hand side of L_h')
    u = solve_Lh_unchecked(r)
    N = r.shape[0]
    # normwise backward error: ||L u - r|| / (||L|| ||u|| + ||r||)
    resid = np.max(np.abs(apply_Lh(u) - r))
    denom = 8.0 * N * N * np.max(np.abs(u)) + np.max(np.abs(r))
    rel = resid / denom if denom > 0 else 0.0
    if rel > tol:
        raise SolverError('L_h solve residual above tolerance', {'residual': rel, 'tol': tol})
    return u


def solve_neg_lap_gamma_unchecked(r: np.ndarray) -> np.ndarray:
    N = r.shape[0]
    rhat = np.fft.rfft(r - r.mean())
    lam = mode_eigenvalues(N)
    uhat = np.zeros_like(rhat)
    uhat[1:] = rhat[1:] / lam[1:]
    u = np.fft.irfft(uhat, n=N)
    return u - u.mean()


def solve_neg_lap_gamma(r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if r.ndim != 1:
        raise CompatibilityError(f'boundary field must be one-dimensional, got {r.shape}')
    _check_mean_zero(inner_gamma(r, 1.0), float(np.sqrt(inner_gamma(r, r))), 'boundary right-hand side')
    u = solve_neg_lap_gamma_unchecked(r)
    N = r.shape[0]
    resid = np.max(np.abs(neg_lap_gamma(u) - r))
    denom = 4.0 * N * N * np.max(np.abs(u)) + np.max(np.abs(r))
    rel = resid / denom if denom > 0 else 0.0
    if rel > tol:
        raise SolverError('boundary solve residual above tolerance', {'residual': rel, 'tol': tol})
    return u


# ═══════════════════════════════════════════════════════════
# -1 PRODUCTS
# ═══════════════════════════════════════════════════════════
def inner_minus1(f: np.ndarray, g: np.ndarray) -> float:
    _check_mean_zero(weighted_mean(f), norm_omega(f), 'left argument')
    return inner_omega(f, solve_Lh(g))


def inner_minus1_gamma(f: np.ndarray, g: np.ndarray) -> float:
    _check_mean_zero(inner_gamma(f, 1.0), float(np.sqrt(inner_gamma(f, f))), 'left argument')
    return inner_gamma(f, solve_neg_lap_gamma(g))


def norm_minus1(f: np.ndarray) -> float:
    return float(np.sqrt(max(inner_minus1(f, f), 0.0)))


def norm_minus1_gamma(f: np.ndarray) -> float:
    return float(np.sqrt(max(inner_minus1_gamma(f, f), 0.0)))


# ═══════════════════════════════════════════════════════════
# MASS DECOMPOSITION
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class MassTriple:
    bulk: float
    bottom: float
    top: float

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.bulk, self.bottom, self.top)


@dataclass(frozen=True)
class ConstantMassFunction:
    f0: float
    f_bottom: float
    f_top: float

    def as_field(self, N: int) -> np.ndarray:
        a = np.full((N, N + 1), self.f0)
        a[:, 0] = self.f_bottom
        a[:, N] = self.f_top
        return a


def masses(phi: np.ndarray) -> MassTriple:
    """Bulk, bottom and top means (|Omega| = |Gamma| = 1, so means equal integrals)."""
    return MassTriple(weighted_mean(phi), inner_gamma(phi[:, 0], 1.0), inner_gamma(phi[:, -1], 1.0))


def mass_decompose(psi: np.ndarray) -> Tuple[ConstantMassFunction, np.ndarray]:
    N = _require_bulk(psi)
    h = 1.0 / N
    m = masses(psi)
    f0 = (m.bulk - 0.5 * h * (m.bottom + m.top)) / (1.0 - h)
    a = ConstantMassFunction(f0, m.bottom, m.top)
    return a, psi - a.as_field(N)


def interior_mean(f: np.ndarray) -> float:
    """Plain mean over rows j = 1..N-1, which equals f0 of the mass split."""
    return float(f[:, 1:-1].mean())


def unit_weights(N: int) -> np.ndarray:
    """Per-node weights h^2 w_j broadcast to a bulk field."""
    return np.broadcast_to((1.0 / N) ** 2 * node_weights(N), (N, N + 1))
