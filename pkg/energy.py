"""
Flory-Huggins potential, discrete total energy E_h, and the per-step convex
functional F_h^n with its gradient and Hessian action.

`sides` names the boundary rows that carry a dynamic (surface Cahn-Hilliard)
condition; rows not listed are homogeneous Neumann walls and contribute no
surface terms. ('bottom', 'top') is the fully dynamic scheme, () the Neumann one.
"""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from elliptic import (apply_Lh, masses, neg_lap_gamma, solve_Lh_unchecked,
                      solve_neg_lap_gamma_unchecked, unit_weights)
from errors import CompatibilityError, ConfigError, DomainError
from grid import (_require_bulk, grad_norm_gamma_sq, grad_norm_sq, inner_gamma,
                  inner_omega, side_row)

log = logging.getLogger(__name__)

DYNAMIC_BOTH = ('bottom', 'top')
MASS_COMPAT_TOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    eps: float = 0.02
    kappa: float = 0.02
    theta0: float = 3.0
    s: float = 1e-5

    def __post_init__(self):
        for name in ('eps', 'kappa', 'theta0', 's'):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f'{name} must be strictly positive, got {value!r}')


# ═══════════════════════════════════════════════════════════
# POTENTIAL
# ═══════════════════════════════════════════════════════════
def fh_potential(x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """I, I', I'' of I(x) = (1+x)ln(1+x) + (1-x)ln(1-x)."""
    x = np.asarray(x, dtype=float)
    if np.any(~(np.abs(x) < 1.0)):
        worst = float(np.nanmax(np.abs(x))) if x.size else float('nan')
        raise DomainError('Flory-Huggins potential evaluated outside (-1, 1)', {'max_abs': worst})
    lp, lm = np.log1p(x), np.log1p(-x)
    return (1.0 + x) * lp + (1.0 - x) * lm, lp - lm, 1.0 / (1.0 + x) + 1.0 / (1.0 - x)


def _sum_gamma(values: np.ndarray) -> float:
    return inner_gamma(values, 1.0)


# ═══════════════════════════════════════════════════════════
# TOTAL ENERGY
# ═══════════════════════════════════════════════════════════
def total_energy(phi: np.ndarray, p: ModelParams, sides: Sequence[str] = DYNAMIC_BOTH) -> float:
    N = _require_bulk(phi)
    eps, kappa, theta0 = p.eps, p.kappa, p.theta0
    I, _, _ = fh_potential(phi)
    e = inner_omega(I, 1.0) / eps
    e -= theta0 / (2.0 * eps) * inner_omega(phi, phi)
    e += 0.5 * eps * inner_omega(phi, apply_Lh(phi))
    for side in sides:
        tr = phi[:, side_row(N, side)]
        e += _sum_gamma(I[:, side_row(N, side)]) / eps
        e -= theta0 / (2.0 * eps) * inner_gamma(tr, tr)
        e += 0.5 * kappa * inner_gamma(tr, neg_lap_gamma(tr))
    return float(e)


def dissipation(mu: np.ndarray, mu_b: np.ndarray, mu_t: np.ndarray, s: float,
                sides: Sequence[str] = DYNAMIC_BOTH) -> float:
    """s * (||grad mu||^2 + ||D_x mu_B||^2 + ||D_x mu_T||^2), surface terms for dynamic sides only."""
    total = grad_norm_sq(mu)
    if 'bottom' in sides:
        total += grad_norm_gamma_sq(mu_b)
    if 'top' in sides:
        total += grad_norm_gamma_sq(mu_t)
    return float(s * total)


# ═══════════════════════════════════════════════════════════
# STEP FUNCTIONAL
# ═══════════════════════════════════════════════════════════
def check_mass_compatible(phi: np.ndarray, phi_n: np.ndarray, sides: Sequence[str] = DYNAMIC_BOTH):
    if phi.shape != phi_n.shape:
        raise CompatibilityError(f'grid mismatch: {phi.shape} vs {phi_n.shape}')
    m, mn = masses(phi), masses(phi_n)
    diffs = {'bulk': m.bulk - mn.bulk}
    if 'bottom' in sides:
        diffs['bottom'] = m.bottom - mn.bottom
    if 'top' in sides:
        diffs['top'] = m.top - mn.top
    bad = {k: v for k, v in diffs.items() if abs(v) > MASS_COMPAT_TOL}
    if bad:
        raise CompatibilityError('phase fields have different masses', bad)


def functional_value(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams,
                     sides: Sequence[str] = DYNAMIC_BOTH) -> float:
    """F_h^n without the mass-compatibility check (Newton iterates are compatible by construction)."""
    N = phi.shape[0]
    eps, kappa, theta0, s = p.eps, p.kappa, p.theta0, p.s
    delta = phi - phi_n
    I, _, _ = fh_potential(phi)
    f = 0.5 / s * inner_omega(delta, solve_Lh_unchecked(delta))
    f += inner_omega(I, 1.0) / eps
    f += 0.5 * eps * inner_omega(phi, apply_Lh(phi))
    f -= theta0 / eps * inner_omega(phi_n, phi)
    for side in sides:
        j = side_row(N, side)
        d, tr = delta[:, j], phi[:, j]
        f += 0.5 / s * inner_gamma(d, solve_neg_lap_gamma_unchecked(d))
        f += _sum_gamma(I[:, j]) / eps
        f += 0.5 * kappa * inner_gamma(tr, neg_lap_gamma(tr))
        f -= theta0 / eps * inner_gamma(phi_n[:, j], tr)
    return float(f)


def step_functional(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams,
                    sides: Sequence[str] = DYNAMIC_BOTH) -> float:
    check_mass_compatible(phi, phi_n, sides)
    return functional_value(phi, phi_n, p, sides)


def printed_step_functional(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams) -> float:
    """
    F_h^n with the surface coefficients 1/(hs), 2/h and kappa/h, the surface
    products read as half-row products (h^2/2) * sum. Equal to step_functional.
    """
    check_mass_compatible(phi, phi_n)
    N = phi.shape[0]
    h = 1.0 / N
    eps, kappa, theta0, s = p.eps, p.kappa, p.theta0, p.s

    def half_row(f, g):
        return 0.5 * h * h * float(np.sum(f * g))

    delta = phi - phi_n
    I, _, _ = fh_potential(phi)
    f = 0.5 / s * inner_omega(delta, solve_Lh_unchecked(delta))
    f += inner_omega(I, 1.0) / eps + 0.5 * eps * inner_omega(phi, apply_Lh(phi))
    f -= theta0 / eps * inner_omega(phi_n, phi)
    for j in (0, N):
        d, tr = delta[:, j], phi[:, j]
        f += 1.0 / (h * s) * half_row(d, solve_neg_lap_gamma_unchecked(d))
        f += 2.0 / (h * eps) * half_row(I[:, j], 1.0)
        f += kappa / h * half_row(tr, neg_lap_gamma(tr))
        f -= 2.0 * theta0 / (h * eps) * half_row(phi_n[:, j], tr)
    return float(f)


# ═══════════════════════════════════════════════════════════
# FIRST AND SECOND VARIATION
# ═══════════════════════════════════════════════════════════
def gradient_terms(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams,
                   sides: Sequence[str] = DYNAMIC_BOTH) -> Tuple[np.ndarray, np.ndarray]:
    """
    Plain nodal gradient of F_h^n, plus the per-node magnitude of its bulk
    contributions in chemical-potential units (absolute values, L_h applied
    to |phi| with |stencil|, no node weights).
    """
    N = phi.shape[0]
    h = 1.0 / N
    eps, kappa, theta0, s = p.eps, p.kappa, p.theta0, p.s
    W = unit_weights(N)
    delta = phi - phi_n
    _, I1, _ = fh_potential(phi)
    inv = solve_Lh_unchecked(delta) / s
    lphi = apply_Lh(phi)
    bulk = inv + I1 / eps + eps * lphi - theta0 / eps * phi_n
    mag = (np.abs(inv) + np.abs(I1) / eps + eps * abs_Lh(phi) + theta0 / eps * np.abs(phi_n))
    g = W * bulk
    for side in sides:
        j = side_row(N, side)
        d, tr = delta[:, j], phi[:, j]
        inv_b = solve_neg_lap_gamma_unchecked(d) / s
        surf = inv_b + I1[:, j] / eps + kappa * neg_lap_gamma(tr) - theta0 / eps * phi_n[:, j]
        g[:, j] += h * surf
    return g, mag


def step_gradient(phi: np.ndarray, phi_n: np.ndarray, p: ModelParams,
                  sides: Sequence[str] = DYNAMIC_BOTH) -> np.ndarray:
    return gradient_terms(phi, phi_n, p, sides)[0]


def hessian_apply(phi: np.ndarray, p: ModelParams, d: np.ndarray,
                  sides: Sequence[str] = DYNAMIC_BOTH) -> np.ndarray:
    N = phi.shape[0]
    h = 1.0 / N
    eps, kappa, s = p.eps, p.kappa, p.s
    _, _, I2 = fh_potential(phi)
    out = unit_weights(N) * (solve_Lh_unchecked(d) / s + I2 * d / eps + eps * apply_Lh(d))
    for side in sides:
        j = side_row(N, side)
        dj = d[:, j]
        out[:, j] += h * (solve_neg_lap_gamma_unchecked(dj) / s + I2[:, j] * dj / eps
                          + kappa * neg_lap_gamma(dj))
    return out


# ═══════════════════════════════════════════════════════════
# STENCIL MAGNITUDES
# ═══════════════════════════════════════════════════════════
def abs_Lh(phi: np.ndarray) -> np.ndarray:
    """|L_h| applied to |phi|: every stencil coefficient taken in absolute value."""
    a = np.abs(phi)
    N = phi.shape[0]
    h2 = (1.0 / N) ** 2
    out = (np.roll(a, -1, axis=0) + np.roll(a, 1, axis=0) + 4.0 * a) / h2
    out[:, 1:-1] += (a[:, 2:] + a[:, :-2]) / h2
    out[:, 0] += 2.0 * a[:, 1] / h2
    out[:, -1] += 2.0 * a[:, -2] / h2
    return out


def abs_neg_lap_gamma(g: np.ndarray) -> np.ndarray:
    a = np.abs(g)
    h2 = (1.0 / g.shape[0]) ** 2
    return (np.roll(a, -1) + 2.0 * a + np.roll(a, 1)) / h2
