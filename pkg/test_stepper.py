import numpy as np
import pytest
from numpy.testing import assert_allclose

import stepper
from elliptic import MassTriple, mass_decompose, masses
from energy import DYNAMIC_BOTH, ModelParams, fh_potential, total_energy
from errors import CompatibilityError, ConfigError, DomainError, SolverError
from grid import GridParams, boundary_normal_derivative, reflect_ghosts
from harness import InitialCondition, make_initial
from stepper import (MassConstraints, SolverConfig, StepResult, advance, advance_mixed,
                     advance_neumann, advance_sides, energy_slack, max_step_to_boundary,
                     recover_potentials, scheme_residual)

CFG = SolverConfig()
P_SMALL = ModelParams(eps=0.1, kappa=0.1, theta0=3.0, s=1e-4)
SPINODAL = ModelParams(eps=0.02, kappa=1.0, theta0=3.0, s=1e-5)


@pytest.fixture
def rng():
    return np.random.default_rng(2)


def _random_state(rng, N, amp=0.5, mean=0.1):
    return mean + amp * rng.uniform(-1, 1, (N, N + 1))


@pytest.fixture(scope='module')
def spinodal_step():
    phi_n = make_initial(InitialCondition('spinodal', seed=1), GridParams(64))
    return phi_n, advance(phi_n, SPINODAL, CFG)


# ─────────────────────────────────────────────────────────
# Steady states
# ─────────────────────────────────────────────────────────
@pytest.mark.parametrize('step', [advance, advance_neumann, advance_mixed])
def test_constant_state_is_fixed_point(step):
    N = 8
    c = 0.3
    phi_n = np.full((N, N + 1), c)
    res = step(phi_n, P_SMALL, CFG)
    assert res.report.newton_iters == 0
    assert_allclose(res.phi, c, atol=1e-14)
    _, I1, _ = fh_potential(c)
    mu = (float(I1) - P_SMALL.theta0 * c) / P_SMALL.eps
    assert_allclose(res.mu, mu, rtol=1e-12)
    assert_allclose(res.mu_b, mu, rtol=1e-12)
    assert_allclose(res.mu_t, mu, rtol=1e-12)
    assert_allclose(res.ghosts[:, 0], res.ghosts[:, 2])
    assert_allclose(res.ghosts[:, -1], res.ghosts[:, -3])
    assert res.multipliers[0] == pytest.approx(-mu, rel=1e-12)
    assert max(scheme_residual(res, phi_n, P_SMALL).values()) <= 1e-12


def test_step_result_is_read_only(rng):
    res = advance(_random_state(rng, 8), P_SMALL, CFG)
    assert isinstance(res, StepResult)
    with pytest.raises(ValueError):
        res.phi[0, 0] = 0.0


# ─────────────────────────────────────────────────────────
# Conservation, energy law and scheme equivalence
# ─────────────────────────────────────────────────────────
def test_masses_conserved(rng):
    phi_n = _random_state(rng, 16)
    res = advance(phi_n, P_SMALL, CFG)
    before, after = masses(phi_n), masses(res.phi)
    assert_allclose(after.as_tuple(), before.as_tuple(), atol=1e-12)
    assert np.max(np.abs(res.phi - phi_n)) > 1e-6


def test_spinodal_energy_inequality(spinodal_step):
    phi_n, res = spinodal_step
    e_before = total_energy(phi_n, SPINODAL)
    assert energy_slack(e_before, res) <= 1e-10 * max(1.0, abs(e_before))
    assert res.report.dissipation > 0


def test_spinodal_scheme_residuals(spinodal_step):
    phi_n, res = spinodal_step
    report = scheme_residual(res, phi_n, SPINODAL)
    assert set(report) == {'eq1', 'eq2', 'eq3', 'eq5', 'eq6', 'eq7', 'eq8'}
    assert max(report.values()) <= 10 * CFG.newton_tol
    mu_g = reflect_ghosts(np.asarray(res.mu))
    assert np.max(np.abs(boundary_normal_derivative(mu_g, 'bottom'))) <= 1e-9


def test_perturbed_solution_is_detected(spinodal_step):
    phi_n, res = spinodal_step
    N = phi_n.shape[0]
    bad = np.array(res.phi)
    bad[3, N // 2] += 1e-3
    bad[10, N // 2] -= 1e-3
    mu, mu_b, mu_t, ghosts = recover_potentials(bad, phi_n, SPINODAL)
    perturbed = StepResult(bad, mu, mu_b, mu_t, res.multipliers, res.report, ghosts, DYNAMIC_BOTH)
    assert max(scheme_residual(perturbed, phi_n, SPINODAL).values()) >= 1e-4


def test_projected_gradient_vanishes_at_solution(spinodal_step):
    phi_n, res = spinodal_step
    assert res.report.final_residual <= CFG.newton_tol


def test_spinodal_steps_keep_masses_and_residuals():
    phi = make_initial(InitialCondition('spinodal', seed=1), GridParams(64))
    m0 = masses(phi)
    for n in range(12):
        res = advance(phi, SPINODAL, CFG)
        m = masses(res.phi)
        assert_allclose(m.as_tuple(), m0.as_tuple(), atol=1e-12, err_msg=f'step {n + 1}')
        report = scheme_residual(res, phi, SPINODAL)
        assert max(report.values()) <= 10 * CFG.newton_tol, (n + 1, report)
        phi = np.array(res.phi)


# ─────────────────────────────────────────────────────────
# Solver safeguards
# ─────────────────────────────────────────────────────────
def test_unconverged_linear_solve_is_discarded(rng, monkeypatch):
    def runaway_cg(A, b, **kwargs):
        return np.full_like(b, 6e14), stepper.CG_MAXITER

    monkeypatch.setattr(stepper.spla, 'cg', runaway_cg)
    phi_n = _random_state(rng, 8, amp=0.3)
    res = advance(phi_n, P_SMALL, CFG)
    assert_allclose(masses(res.phi).as_tuple(), masses(phi_n).as_tuple(), atol=1e-12)
    assert res.report.final_residual <= CFG.newton_tol
    assert max(scheme_residual(res, phi_n, P_SMALL).values()) <= 10 * CFG.newton_tol


def test_missing_descent_direction_raises(rng, monkeypatch):
    monkeypatch.setattr(stepper.spla, 'cg', lambda A, b, **kwargs: (np.full_like(b, np.nan), 1))
    monkeypatch.setattr(stepper, '_apply_blocks', lambda blocks, r: -r)
    with pytest.raises(SolverError) as excinfo:
        advance(_random_state(rng, 8), P_SMALL, CFG)
    assert excinfo.value.diagnostics['residual'] > CFG.newton_tol
    assert excinfo.value.diagnostics['iteration'] == 0


def test_mass_drift_in_step_raises():
    before = MassTriple(0.1, 0.2, 0.3)
    stats = {'newton_iters': 3, 'residual': 1e-11}
    stepper._check_step_masses(MassTriple(0.1, 0.2, 0.3 + 1e-3), before, ('bottom',), stats)
    with pytest.raises(SolverError, match='masses'):
        stepper._check_step_masses(MassTriple(0.1 + 1e-9, 0.2, 0.3), before, (), stats)
    with pytest.raises(SolverError):
        stepper._check_step_masses(MassTriple(0.1, 0.2, 0.3 + 1e-9), before, DYNAMIC_BOTH, stats)


def test_initial_guess_with_wrong_masses_rejected(rng):
    phi_n = _random_state(rng, 8)
    with pytest.raises(CompatibilityError):
        advance(phi_n, P_SMALL, CFG, initial_guess=np.zeros_like(phi_n))


# ─────────────────────────────────────────────────────────
# Uniqueness and determinism
# ─────────────────────────────────────────────────────────
def test_distinct_starting_guesses_agree(rng):
    phi_n = _random_state(rng, 16)
    a = advance(phi_n, P_SMALL, CFG, initial_guess='previous')
    b = advance(phi_n, P_SMALL, CFG, initial_guess='constant-mass')
    assert np.max(np.abs(a.phi - b.phi)) <= 10 * CFG.newton_tol


def test_explicit_initial_guess(rng):
    phi_n = _random_state(rng, 8)
    a, _ = mass_decompose(phi_n)
    res = advance(phi_n, P_SMALL, CFG, initial_guess=a.as_field(8))
    ref = advance(phi_n, P_SMALL, CFG)
    assert np.max(np.abs(res.phi - ref.phi)) <= 10 * CFG.newton_tol


def test_repeated_runs_are_bitwise_identical(rng):
    phi_n = _random_state(rng, 16)
    a = advance(phi_n, P_SMALL, CFG)
    b = advance(phi_n, P_SMALL, CFG)
    assert np.array_equal(a.phi, b.phi)
    assert np.array_equal(a.mu, b.mu)


# ─────────────────────────────────────────────────────────
# Boundary modes
# ─────────────────────────────────────────────────────────
def test_neumann_conserves_bulk_only(rng):
    phi = _random_state(rng, 16)
    m0 = masses(phi)
    energy = total_energy(phi, P_SMALL, ())
    for _ in range(5):
        res = advance_neumann(phi, P_SMALL, CFG)
        assert res.sides == ()
        assert energy_slack(energy, res) <= 1e-10 * max(1.0, abs(energy))
        report = scheme_residual(res, phi, P_SMALL)
        assert set(report) == {'eq1', 'eq2', 'eq3'}
        assert max(report.values()) <= 10 * CFG.newton_tol
        phi, energy = np.array(res.phi), res.report.energy
    m1 = masses(phi)
    assert abs(m1.bulk - m0.bulk) <= 1e-12
    assert abs(m1.bottom - m0.bottom) > 1e-8


def test_mixed_conserves_bottom_trace(rng):
    phi = _random_state(rng, 16)
    m0 = masses(phi)
    for _ in range(5):
        res = advance_mixed(phi, P_SMALL, CFG)
        phi = np.array(res.phi)
    m1 = masses(phi)
    assert abs(m1.bulk - m0.bulk) <= 1e-12
    assert abs(m1.bottom - m0.bottom) <= 1e-12
    assert abs(m1.top - m0.top) > 1e-8
    assert res.multipliers[2] == 0.0


def test_advance_sides_matches_named_steppers(rng):
    phi_n = _random_state(rng, 8)
    assert np.array_equal(advance_sides(phi_n, P_SMALL, CFG, ('bottom',)).phi,
                          advance_mixed(phi_n, P_SMALL, CFG).phi)


# ─────────────────────────────────────────────────────────
# Positivity
# ─────────────────────────────────────────────────────────
def test_positivity_stress_run():
    p = ModelParams(eps=0.05, kappa=0.05, theta0=3.0, s=1e-4)
    phi = make_initial(InitialCondition('cosine', amplitude=0.99), GridParams(8))
    assert np.max(np.abs(phi)) == pytest.approx(0.99)
    for _ in range(200):
        res = advance(phi, p, CFG)
        assert res.report.min_gap > 0
        assert max(scheme_residual(res, phi, p).values()) <= 10 * CFG.newton_tol
        phi = np.array(res.phi)
        assert np.max(np.abs(phi)) < 1.0


def test_fraction_to_boundary_cap():
    phi = np.array([0.5, -0.5, 0.0])
    d = np.array([1.0, 1.0, -2.0])
    t = max_step_to_boundary(phi, d, margin=0.0)
    assert t == pytest.approx(0.5)
    assert max_step_to_boundary(phi, np.zeros(3)) == np.inf


def test_inadmissible_previous_state():
    phi = np.zeros((4, 5))
    phi[0, 0] = 1.0
    with pytest.raises(DomainError):
        advance(phi, P_SMALL, CFG)


def test_projection_removes_masses(rng):
    N = 8
    cons = MassConstraints(N, DYNAMIC_BOTH)
    v = cons.project(rng.uniform(-1, 1, (N, N + 1)))
    m = masses(v)
    assert max(abs(m.bulk), abs(m.bottom), abs(m.top)) <= 1e-15
    assert_allclose(cons.project(v), v, atol=1e-15)


def test_solver_config_validation():
    with pytest.raises(ConfigError):
        SolverConfig(fraction_to_boundary=1.0)
    with pytest.raises(ConfigError):
        SolverConfig(newton_tol=0.0)
    with pytest.raises(ConfigError):
        SolverConfig(max_newton=0)
