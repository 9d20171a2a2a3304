"""
One implicit convex-splitting step.

The step is the unique minimizer of F_h^n over phase fields with |phi| < 1 and
prescribed bulk / surface masses. It is computed by a damped Newton method
on the mass-constrained space: directions from preconditioned CG on the
projected Hessian, a fraction-to-boundary cap keeping every iterate inside
(-1, 1), then Armijo backtracking on F_h^n. Chemical potentials and ghost
rows are reconstructed afterwards and the original scheme equations are
re-evaluated as a residual report.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Sequence, Tuple, Union

import numpy as np
import scipy.sparse.linalg as spla

from elliptic import (MassTriple, apply_Lh, interior_mean, mass_decompose, masses,
                      mode_eigenvalues, neg_lap_gamma, solve_Lh_unchecked,
                      solve_neg_lap_gamma_unchecked, unit_weights, y_operator)
from energy import (DYNAMIC_BOTH, ModelParams, abs_neg_lap_gamma, check_mass_compatible,
                    dissipation, fh_potential, functional_value, gradient_terms,
                    hessian_apply, total_energy)
from errors import ConfigError, DomainError, PositivityError, SolverError
from grid import (_require_bulk, attach_ghosts, boundary_normal_derivative,
                  laplacian_5pt, laplacian_gamma, node_weights, reflect_ghosts,
                  side_row)

log = logging.getLogger(__name__)

BOUNDARY_MARGIN = 1e-13
ADMISSIBLE_MARGIN = 1e-14
REFERENCE_CURVATURE = 2.0   # I''(0), the minimum of I''
CG_MAXITER = 500
CG_FORCING_MAX = 1e-2
CG_ACCEPT_RATIO = 0.5       # unconverged CG output is kept only below this residual ratio
MASS_LEAK_TOL = 1e-12
STEP_MASS_TOL = 1e-12
MAX_HALVINGS = 60


# ═══════════════════════════════════════════════════════════
# CONFIG AND RESULTS
# ═══════════════════════════════════════════════════════════
@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton: int = 50
    linear_tol: float = 1e-12
    fraction_to_boundary: float = 0.95
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5

    def __post_init__(self):
        for name in ('newton_tol', 'linear_tol'):
            if not getattr(self, name) > 0:
                raise ConfigError(f'{name} must be > 0, got {getattr(self, name)!r}')
        if int(self.max_newton) < 1:
            raise ConfigError(f'max_newton must be >= 1, got {self.max_newton!r}')
        if not 0 < self.fraction_to_boundary < 1:
            raise ConfigError(f'fraction_to_boundary must lie in (0, 1), got {self.fraction_to_boundary!r}')
        if not 0 < self.armijo_c < 1:
            raise ConfigError(f'armijo_c must lie in (0, 1), got {self.armijo_c!r}')
        if not 0 < self.backtrack_factor < 1:
            raise ConfigError(f'backtrack_factor must lie in (0, 1), got {self.backtrack_factor!r}')


@dataclass(frozen=True)
class StepReport:
    newton_iters: int
    final_residual: float
    energy: float
    masses: MassTriple
    dissipation: float
    cg_iters: int = 0
    halvings: int = 0
    min_gap: float = 1.0    # min over iterates of 1 - max|phi|


@dataclass(frozen=True)
class StepResult:
    phi: np.ndarray
    mu: np.ndarray
    mu_b: np.ndarray
    mu_t: np.ndarray
    multipliers: Tuple[float, float, float]
    report: StepReport
    ghosts: np.ndarray
    sides: Tuple[str, ...] = field(default=DYNAMIC_BOTH)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


# ═══════════════════════════════════════════════════════════
# CONSTRAINTS
# ═══════════════════════════════════════════════════════════
class MassConstraints:
    """Euclidean projection onto fields with zero bulk mass and zero mass on each dynamic side."""

    def __init__(self, N: int, sides: Sequence[str]):
        self.N = N
        self.sides = tuple(sides)
        h = 1.0 / N
        normals = [np.array(unit_weights(N))]
        for side in self.sides:
            e = np.zeros((N, N + 1))
            e[:, side_row(N, side)] = h
            normals.append(e)
        self.C = np.stack([n.ravel() for n in normals], axis=1)
        self.gram_inv = np.linalg.inv(self.C.T @ self.C)

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        return self.gram_inv @ (self.C.T @ g.ravel())

    def project(self, v: np.ndarray) -> np.ndarray:
        flat = v.ravel()
        return (flat - self.C @ (self.gram_inv @ (self.C.T @ flat))).reshape(v.shape)


# ═══════════════════════════════════════════════════════════
# PRECONDITIONER
# ═══════════════════════════════════════════════════════════
@lru_cache(maxsize=4)
def _preconditioner_blocks(N: int, s: float, eps: float, kappa: float,
                           sides: Tuple[str, ...]) -> np.ndarray:
    """
    Inverse of the constant-coefficient Hessian (I'' frozen at its minimum),
    one (N+1)x(N+1) block per rfft mode. Mode 0 is the constrained block.
    """
    h = 1.0 / N
    n1 = N + 1
    wy = h * h * node_weights(N)
    ly = y_operator(N)
    lam = mode_eigenvalues(N)
    eye = np.eye(n1)
    rows = [side_row(N, side) for side in sides]
    cbar = REFERENCE_CURVATURE

    lm = ly[None, :, :] + lam[1:, None, None] * eye
    k = wy[None, :, None] * (np.linalg.inv(lm) / s + (cbar / eps) * eye + eps * lm)
    for j in rows:
        k[:, j, j] += h * (1.0 / (s * lam[1:]) + cbar / eps + kappa * lam[1:])
    blocks = np.empty((lam.size, n1, n1))
    blocks[1:] = np.linalg.inv(k)

    bordered = np.zeros((n1 + 1, n1 + 1))
    bordered[:n1, :n1] = ly
    bordered[:n1, n1] = 1.0
    bordered[n1, :n1] = wy
    l0_pinv = np.linalg.inv(bordered)[:n1, :n1]
    k0 = wy[:, None] * (l0_pinv / s + (cbar / eps) * eye + eps * ly)
    for j in rows:
        k0[j, j] += h * cbar / eps
    cols = [wy] + [h * eye[j] for j in rows]
    c = np.stack(cols, axis=1)
    nc = c.shape[1]
    kkt = np.zeros((n1 + nc, n1 + nc))
    kkt[:n1, :n1] = k0
    kkt[:n1, n1:] = c
    kkt[n1:, :n1] = c.T
    blocks[0] = np.linalg.inv(kkt)[:n1, :n1]
    blocks.setflags(write=False)
    return blocks


def _apply_blocks(blocks: np.ndarray, r: np.ndarray) -> np.ndarray:
    N = r.shape[0]
    rhat = np.fft.rfft(r, axis=0)
    zhat = np.einsum('mjk,mk->mj', blocks, rhat)
    return np.fft.irfft(zhat, n=N, axis=0)


# ═══════════════════════════════════════════════════════════
# LINE SEARCH HELPERS
# ═══════════════════════════════════════════════════════════
def max_step_to_boundary(phi: np.ndarray, d: np.ndarray, margin: float = BOUNDARY_MARGIN) -> float:
    """Largest t with max|phi + t d| <= 1 - margin."""
    lim = 1.0 - margin
    t = np.inf
    pos, neg = d > 0, d < 0
    if pos.any():
        t = min(t, float(np.min((lim - phi[pos]) / d[pos])))
    if neg.any():
        t = min(t, float(np.min((lim + phi[neg]) / -d[neg])))
    return max(t, 0.0)


def _check_admissible(phi: np.ndarray, where: str):
    worst = float(np.max(np.abs(phi)))
    if not worst <= 1.0 - ADMISSIBLE_MARGIN:
        raise PositivityError(f'{where} left (-1, 1)', {'max_abs': worst})
    return 1.0 - worst


# ═══════════════════════════════════════════════════════════
# NEWTON SOLVE
# ═══════════════════════════════════════════════════════════
def _stationarity(g: np.ndarray, mag: np.ndarray, cons: MassConstraints, W: np.ndarray) -> float:
    """Projected gradient per node in potential units, relative to the bulk term magnitude."""
    r = cons.project(g)
    scale = max(1.0, float(np.max(mag)))
    return float(np.max(np.abs(r / W))) / scale


def _mass_leak(cons: MassConstraints, d: np.ndarray) -> float:
    """Largest constrained mass carried by d, relative to max|d|."""
    size = float(np.max(np.abs(d)))
    if size == 0.0:
        return 0.0
    return float(np.max(np.abs(cons.C.T @ d.ravel()))) / size


def _feasible_direction(cons: MassConstraints, v: np.ndarray):
    """Project v onto the constraint space; None when the masses cannot be removed to rounding."""
    if not np.all(np.isfinite(v)):
        return None
    d = cons.project(v)
    if _mass_leak(cons, d) > MASS_LEAK_TOL:
        d = cons.project(d)
    if _mass_leak(cons, d) > MASS_LEAK_TOL:
        return None
    return d


def minimize_step(phi_n: np.ndarray, p: ModelParams, cfg: SolverConfig,
                  sides: Sequence[str] = DYNAMIC_BOTH,
                  initial_guess: Union[None, str, np.ndarray] = None):
    """Newton minimization of F_h^n; returns (phi, multipliers, stats)."""
    N = _require_bulk(phi_n, 'phi_n')
    sides = tuple(sides)
    if not float(np.max(np.abs(phi_n))) < 1.0:
        raise DomainError('previous state is not admissible', {'max_abs': float(np.max(np.abs(phi_n)))})

    if initial_guess is None or (isinstance(initial_guess, str) and initial_guess == 'previous'):
        phi = np.array(phi_n, dtype=float)
    elif isinstance(initial_guess, str) and initial_guess == 'constant-mass':
        # matches all three masses, so it is feasible for any set of dynamic sides
        a, _ = mass_decompose(phi_n)
        phi = a.as_field(N)
    else:
        phi = np.array(initial_guess, dtype=float)
        _require_bulk(phi, 'initial guess')
        check_mass_compatible(phi, phi_n, sides)

    cons = MassConstraints(N, sides)
    W = np.array(unit_weights(N))
    blocks = _preconditioner_blocks(N, float(p.s), float(p.eps), float(p.kappa), sides)
    min_gap = _check_admissible(phi, 'initial guess')

    def precond(v):
        return cons.project(_apply_blocks(blocks, cons.project(v.reshape(N, N + 1)))).ravel()

    def hess(v):
        d = cons.project(v.reshape(N, N + 1))
        return cons.project(hessian_apply(phi, p, d, sides)).ravel()

    size = N * (N + 1)
    M = spla.LinearOperator((size, size), matvec=precond, dtype=float)
    total_cg = 0
    total_halvings = 0
    residual = np.inf
    k = 0
    while True:
        g, mag = gradient_terms(phi, phi_n, p, sides)
        residual = _stationarity(g, mag, cons, W)
        log.debug(f'newton {k}: residual {residual:.3e}')
        if residual <= cfg.newton_tol:
            break
        if k >= cfg.max_newton:
            raise SolverError('Newton iteration did not converge',
                              {'iterations': k, 'residual': residual, 'tol': cfg.newton_tol})

        r = cons.project(g)
        A = spla.LinearOperator((size, size), matvec=hess, dtype=float)
        counter = {'n': 0}

        def _count(_xk):
            counter['n'] += 1

        # inexact Newton: the linear solve only needs to track the outer residual
        rtol = max(cfg.linear_tol, 1e-14, min(CG_FORCING_MAX, residual))
        b = -r.ravel()
        d_flat, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=CG_MAXITER, M=M, callback=_count)
        total_cg += counter['n']
        if info != 0:
            ratio = np.inf
            if np.all(np.isfinite(d_flat)):
                ratio = float(np.linalg.norm(A.matvec(d_flat) - b) / np.linalg.norm(b))
            log.debug(f'newton {k}: cg stopped with info={info} after {counter["n"]} iterations '
                      f'(residual ratio {ratio:.3e})')
            if not ratio < CG_ACCEPT_RATIO:
                d_flat = np.full_like(b, np.nan)
        d = _feasible_direction(cons, d_flat.reshape(N, N + 1))
        slope = float(np.sum(g * d)) if d is not None else np.nan
        if not slope < 0:
            log.debug(f'newton {k}: falling back to preconditioned gradient direction')
            d = _feasible_direction(cons, -precond(r.ravel()).reshape(N, N + 1))
            slope = float(np.sum(g * d)) if d is not None else np.nan
        if not slope < 0:
            raise SolverError('no descent direction for the Newton step',
                              {'iteration': k, 'residual': residual, 'tol': cfg.newton_tol,
                               'slope': slope})

        t = min(1.0, cfg.fraction_to_boundary * max_step_to_boundary(phi, d))
        f0 = functional_value(phi, phi_n, p, sides)
        noise = 64.0 * np.finfo(float).eps * max(1.0, abs(f0))
        halvings = 0
        while True:
            trial = phi + t * d
            _check_admissible(trial, 'line-search trial point')
            if functional_value(trial, phi_n, p, sides) <= f0 + cfg.armijo_c * t * slope + noise:
                break
            halvings += 1
            if halvings >= MAX_HALVINGS:
                raise SolverError('line search failed to find sufficient decrease',
                                  {'iteration': k, 'step': t, 'residual': residual})
            t *= cfg.backtrack_factor
        if halvings > 10:
            log.warning(f'newton {k}: line search needed {halvings} reductions (step {t:.3e})')
        total_halvings += halvings
        phi = trial
        min_gap = min(min_gap, _check_admissible(phi, 'Newton iterate'))
        k += 1

    lam = cons.coefficients(g)
    multipliers = [0.0, 0.0, 0.0]
    multipliers[0] = -float(lam[0])
    for idx, side in enumerate(sides, start=1):
        multipliers[1 if side == 'bottom' else 2] = -float(lam[idx])
    stats = {'newton_iters': k, 'residual': residual, 'cg_iters': total_cg,
             'halvings': total_halvings, 'min_gap': min_gap}
    return phi, tuple(multipliers), stats


# ═══════════════════════════════════════════════════════════
# POTENTIAL RECOVERY
# ═══════════════════════════════════════════════════════════
def recover_potentials(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams,
                       sides: Sequence[str] = DYNAMIC_BOTH
                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    mu, mu_B, mu_T and the ghost-extended phase field of a converged step.
    On a Neumann side mu_B (mu_T) is the bulk trace and the phase ghosts are reflected.
    """
    N = _require_bulk(phi)
    h = 1.0 / N
    eps, kappa, theta0, s = p.eps, p.kappa, p.theta0, p.s
    delta = phi - phi_n
    _, I1, _ = fh_potential(phi)
    inv = solve_Lh_unchecked(delta) / s
    base = (I1 - theta0 * phi_n) / eps + eps * apply_Lh(phi)
    c = interior_mean(base + inv)
    mu = c - inv

    ghost_b, ghost_t = phi[:, 1].copy(), phi[:, N - 1].copy()
    mu_b, mu_t = mu[:, 0].copy(), mu[:, N].copy()
    for side in sides:
        j = side_row(N, side)
        tr = phi[:, j]
        bterm = (I1[:, j] - theta0 * phi_n[:, j]) / eps + kappa * neg_lap_gamma(tr)
        inv_b = solve_neg_lap_gamma_unchecked(delta[:, j]) / s
        if side == 'bottom':
            # eq 2 row mean at j=0 fixes the mean of eps * Dy phi there
            eps_dn_mean = 0.5 * h * float(np.mean(mu[:, 0] - base[:, 0]))
            mu_b = float(np.mean(bterm)) - eps_dn_mean - inv_b
            dn = (bterm - mu_b) / eps
            ghost_b = phi[:, 1] - 2.0 * h * dn
        else:
            eps_dn_mean = 0.5 * h * float(np.mean(base[:, N] - mu[:, N]))
            mu_t = float(np.mean(bterm)) + eps_dn_mean - inv_b
            dn = (mu_t - bterm) / eps
            ghost_t = phi[:, N - 1] + 2.0 * h * dn
    return mu, mu_b, mu_t, attach_ghosts(phi, ghost_b, ghost_t)


# ═══════════════════════════════════════════════════════════
# STEPPERS
# ═══════════════════════════════════════════════════════════
def _check_step_masses(after: MassTriple, before: MassTriple, sides: Tuple[str, ...], stats: Dict):
    drift = {'bulk': after.bulk - before.bulk}
    for side in sides:
        drift[side] = getattr(after, side) - getattr(before, side)
    bad = {k: v for k, v in drift.items() if not abs(v) <= STEP_MASS_TOL}
    if bad:
        raise SolverError('Newton solution changed the conserved masses',
                          {**bad, 'iterations': stats['newton_iters'], 'residual': stats['residual']})


def advance_sides(phi_n: np.ndarray, p: ModelParams, cfg: SolverConfig,
                  sides: Sequence[str] = DYNAMIC_BOTH,
                  initial_guess: Union[None, str, np.ndarray] = None) -> StepResult:
    sides = tuple(sides)
    phi, multipliers, stats = minimize_step(phi_n, p, cfg, sides, initial_guess)
    m = masses(phi)
    _check_step_masses(m, masses(phi_n), sides, stats)
    mu, mu_b, mu_t, ghosts = recover_potentials(phi, phi_n, p, sides)
    report = StepReport(
        newton_iters=stats['newton_iters'],
        final_residual=stats['residual'],
        energy=total_energy(phi, p, sides),
        masses=m,
        dissipation=dissipation(mu, mu_b, mu_t, p.s, sides),
        cg_iters=stats['cg_iters'],
        halvings=stats['halvings'],
        min_gap=stats['min_gap'],
    )
    return StepResult(_frozen(phi), _frozen(mu), _frozen(mu_b), _frozen(mu_t),
                      multipliers, report, _frozen(ghosts), sides)


def advance(phi_n: np.ndarray, p: ModelParams, cfg: SolverConfig,
            initial_guess: Union[None, str, np.ndarray] = None) -> StepResult:
    """Dynamic conditions on both physical rows."""
    return advance_sides(phi_n, p, cfg, DYNAMIC_BOTH, initial_guess)


def advance_neumann(phi_n: np.ndarray, p: ModelParams, cfg: SolverConfig,
                    initial_guess: Union[None, str, np.ndarray] = None) -> StepResult:
    return advance_sides(phi_n, p, cfg, (), initial_guess)


def advance_mixed(phi_n: np.ndarray, p: ModelParams, cfg: SolverConfig,
                  initial_guess: Union[None, str, np.ndarray] = None) -> StepResult:
    """Dynamic bottom wall, Neumann top wall."""
    return advance_sides(phi_n, p, cfg, ('bottom',), initial_guess)


BC_MODES = {
    'dynamic': DYNAMIC_BOTH,
    'neumann': (),
    'mixed': ('bottom',),
}


# ═══════════════════════════════════════════════════════════
# SCHEME RESIDUALS
# ═══════════════════════════════════════════════════════════
def _abs_lap(fg: np.ndarray) -> np.ndarray:
    a = np.abs(fg)
    N = fg.shape[0]
    c = a[:, 1:-1]
    return (np.roll(c, -1, axis=0) + np.roll(c, 1, axis=0) + a[:, 2:] + a[:, :-2] + 4.0 * c) * N * N


def _relative(lhs: np.ndarray, mag: np.ndarray) -> float:
    return float(np.max(np.abs(lhs))) / max(1.0, float(np.max(mag)))


def scheme_residual(result: StepResult, phi_n: np.ndarray, p: ModelParams) -> Dict[str, float]:
    """
    Relative l-infinity residual of each scheme equation, each divided by
    max(1, l-infinity of the summed absolute values of its terms).
    Keys: eq1 (update), eq2 (bulk potential), eq3 (no-flux for mu), and for
    dynamic sides eq5/eq6 (bottom) and eq7/eq8 (top).
    """
    eps, kappa, theta0, s = p.eps, p.kappa, p.theta0, p.s
    phi = np.asarray(result.phi)
    ghosts = np.asarray(result.ghosts)
    mu = np.asarray(result.mu)
    N = phi.shape[0]
    h = 1.0 / N
    delta = phi - phi_n
    _, I1, _ = fh_potential(phi)
    mu_g = reflect_ghosts(mu)

    out = {}
    out['eq1'] = _relative(delta / s - laplacian_5pt(mu_g), np.abs(delta) / s + _abs_lap(mu_g))
    rhs2 = (I1 - theta0 * phi_n) / eps - eps * laplacian_5pt(ghosts)
    mag2 = np.abs(mu) + np.abs(I1) / eps + theta0 / eps * np.abs(phi_n) + eps * _abs_lap(ghosts)
    out['eq2'] = _relative(mu - rhs2, mag2)
    dmu = np.concatenate([boundary_normal_derivative(mu_g, 'bottom'),
                          boundary_normal_derivative(mu_g, 'top')])
    dmag = np.concatenate([np.abs(mu_g[:, 2]) + np.abs(mu_g[:, 0]),
                           np.abs(mu_g[:, -1]) + np.abs(mu_g[:, -3])]) / (2.0 * h)
    out['eq3'] = _relative(dmu, dmag)

    for side, (k_upd, k_pot) in (('bottom', ('eq5', 'eq6')), ('top', ('eq7', 'eq8'))):
        if side not in result.sides:
            continue
        j = side_row(N, side)
        mu_s = np.asarray(result.mu_b if side == 'bottom' else result.mu_t)
        tr = phi[:, j]
        d = delta[:, j]
        out[k_upd] = _relative(d / s - laplacian_gamma(mu_s),
                               np.abs(d) / s + abs_neg_lap_gamma(mu_s))
        dn = boundary_normal_derivative(ghosts, side)
        sign = -1.0 if side == 'bottom' else 1.0
        rhs = (I1[:, j] - theta0 * phi_n[:, j]) / eps - kappa * laplacian_gamma(tr) + sign * eps * dn
        mag = (np.abs(mu_s) + np.abs(I1[:, j]) / eps + theta0 / eps * np.abs(phi_n[:, j])
               + kappa * abs_neg_lap_gamma(tr) + eps * (np.abs(ghosts[:, j + 2]) + np.abs(ghosts[:, j])) / (2.0 * h))
        out[k_pot] = _relative(mu_s - rhs, mag)
    return out


def energy_slack(energy_before: float, result: StepResult) -> float:
    """E(phi^{n+1}) + dissipation - E(phi^n); must not be positive beyond rounding."""
    return result.report.energy + result.report.dissipation - energy_before
