import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import CompatibilityError, ConfigError
from grid import (GridParams, attach_ghosts, boundary_normal_derivative, cell_ops,
                  divergence, edge_inner, face_ops_x, face_ops_y, grad_norm_gamma_sq,
                  grad_norm_sq, gradient, inner_gamma, inner_omega, laplacian_5pt,
                  laplacian_gamma, node_weights, reflect_ghosts)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def _cos_rows(N, rows):
    x = np.arange(N) / N
    return np.repeat(np.cos(2 * np.pi * x)[:, None], rows, axis=1)


def test_grid_params_validation():
    g = GridParams(8)
    assert g.h == 0.125
    assert g.y[-1] == 1.0
    for bad in (2, 5, 7):
        with pytest.raises(ConfigError):
            GridParams(bad)


def test_node_weights_sum_to_unit_area():
    for N in (4, 8, 16):
        assert inner_omega(np.ones((N, N + 1)), 1.0) == pytest.approx(1.0, abs=1e-15)
        assert node_weights(N)[0] == 0.5


def test_face_ops_x_constant_and_hand_values():
    a, d = face_ops_x(np.ones((4, 5)))
    assert_allclose(a, 1.0)
    assert_allclose(d, 0.0)
    _, d = face_ops_x(np.array([0.0, 1.0]))
    assert_allclose(d, [2.0, -2.0])


def test_face_ops_x_trigonometric_identity():
    N = 16
    h = 1.0 / N
    _, d = face_ops_x(_cos_rows(N, N + 1))
    xh = (np.arange(N) + 0.5) * h
    expected = -(2.0 / h) * np.sin(np.pi * h) * np.sin(2 * np.pi * xh)
    assert_allclose(d[:, 3], expected, atol=1e-12)


def test_face_ops_y_linear_and_hand_values():
    N = 4
    y = np.arange(-1, N + 2) / N
    f = np.tile(y, (N, 1))
    a, d = face_ops_y(f)
    assert d.shape == (N, N + 2)
    assert_allclose(d, 1.0, atol=1e-12)
    a, d = face_ops_y(np.ones((N, N + 3)))
    assert_allclose(a, 1.0)
    assert_allclose(d, 0.0)

    col = np.array([[0.3, 1.0, 2.0, 4.0, 5.0]] * 2)   # N=2: ghost, a, b, c, ghost
    _, d = face_ops_y(col)
    assert_allclose(d[:, 0], (1.0 - 0.3) / 0.5)


def test_cell_ops_compositions(rng):
    N = 4
    h = 1.0 / N
    f = rng.uniform(-1, 1, (N, N + 1))
    A, D = face_ops_x(f)
    _, dd = cell_ops(D, 'x')
    aa, _ = cell_ops(A, 'x')
    right, left = np.roll(f, -1, axis=0), np.roll(f, 1, axis=0)
    assert_allclose(dd, (right - 2 * f + left) / h ** 2, atol=1e-12)
    assert_allclose(aa, (right + 2 * f + left) / 4, atol=1e-15)

    c, d = cell_ops(np.full((N, N + 2), 2.5), 'y')
    assert c.shape == (N, N + 1)
    assert_allclose(c, 2.5)
    assert_allclose(d, 0.0)


def test_cell_ops_y_needs_extended_range():
    with pytest.raises(CompatibilityError):
        cell_ops(np.zeros((4, 4)), 'y')


def test_divergence_examples(rng):
    N = 8
    ones = np.ones((N, N + 3))
    zero = divergence(ones, (np.full((N, N + 1), 1.5), np.full((N, N + 2), -0.5)))
    assert_allclose(zero, 0.0, atol=1e-12)

    phi = rng.uniform(-1, 1, (N, N + 3))
    lap = laplacian_5pt(phi)
    assert_allclose(divergence(ones, gradient(phi)), lap, atol=1e-12 * np.max(np.abs(lap)))
    assert_allclose(divergence(2 * ones, gradient(phi)), 2 * lap, atol=1e-12 * np.max(np.abs(lap)))


def test_laplacian_eigenmode_and_constant():
    N = 8
    h = 1.0 / N
    phi = _cos_rows(N, N + 3)
    lap = laplacian_5pt(phi)
    assert_allclose(lap, -(4 / h ** 2) * np.sin(np.pi * h) ** 2 * phi[:, 1:-1], atol=1e-11)
    assert_allclose(laplacian_5pt(np.full((N, N + 3), 0.7)), 0.0, atol=1e-12)


def test_laplacian_matches_brute_force(rng):
    N = 6
    h = 1.0 / N
    phi = rng.uniform(-1, 1, (N, N + 3))
    expected = np.empty((N, N + 1))
    for i in range(N):
        for j in range(N + 1):
            c = j + 1
            expected[i, j] = (phi[(i + 1) % N, c] + phi[(i - 1) % N, c] + phi[i, c + 1]
                              + phi[i, c - 1] - 4 * phi[i, c]) / h ** 2
    assert_allclose(laplacian_5pt(phi), expected, atol=1e-11)


def test_laplacian_gamma_examples():
    g = np.array([1.0, 0.0, -1.0, 0.0])
    assert_allclose(laplacian_gamma(g), -2.0 * 16 * g)
    N = 16
    h = 1.0 / N
    cos = np.cos(2 * np.pi * np.arange(N) * h)
    assert_allclose(laplacian_gamma(cos), -(4 / h ** 2) * np.sin(np.pi * h) ** 2 * cos, atol=1e-11)
    assert_allclose(laplacian_gamma(np.full(5, 3.0)), 0.0)


def test_boundary_normal_derivative(rng):
    N = 4
    f = rng.uniform(-1, 1, (N, N + 1))
    assert_allclose(boundary_normal_derivative(reflect_ghosts(f), 'bottom'), 0.0)
    assert_allclose(boundary_normal_derivative(reflect_ghosts(f), 'top'), 0.0)

    y = np.arange(-1, N + 2) / N
    lin = np.tile(y, (N, 1))
    assert_allclose(boundary_normal_derivative(lin, 'bottom'), 1.0, atol=1e-12)
    assert_allclose(boundary_normal_derivative(lin, 'top'), 1.0, atol=1e-12)

    phi = rng.uniform(-1, 1, (N, N + 3))
    _, dy = face_ops_y(phi)
    ay, _ = cell_ops(dy, 'y')
    assert_allclose(boundary_normal_derivative(phi, 'bottom'), ay[:, 0], atol=1e-13)
    assert_allclose(boundary_normal_derivative(phi, 'top'), ay[:, -1], atol=1e-13)


def test_inner_omega_weights():
    N = 8
    h = 1.0 / N
    ones = np.ones((N, N + 1))
    assert inner_omega(ones, ones) == pytest.approx(1.0)
    g = np.zeros((N, N + 1))
    g[3, 4] = 2.5
    assert inner_omega(ones, g) == pytest.approx(h * h * 2.5)
    g = np.zeros((N, N + 1))
    g[3, 0] = 2.5
    assert inner_omega(ones, g) == pytest.approx(h * h * 2.5 / 2)


def test_inner_gamma_examples(rng):
    N = 8
    assert inner_gamma(np.ones(N), np.ones(N)) == pytest.approx(1.0)
    g = np.zeros(N)
    g[2] = -3.0
    assert inner_gamma(np.ones(N), g) == pytest.approx(-3.0 / N)
    f = rng.uniform(-1, 1, N)
    parseval = float(np.sum(np.abs(np.fft.fft(f)) ** 2)) / N ** 2
    assert inner_gamma(f, f) == pytest.approx(parseval, rel=1e-13)


def test_inner_products_reject_mismatched_shapes():
    with pytest.raises(CompatibilityError):
        inner_omega(np.ones((4, 5)), np.ones((8, 9)))
    with pytest.raises(CompatibilityError):
        inner_gamma(np.ones(4), np.ones(8))


def test_gradient_norms():
    N = 16
    h = 1.0 / N
    assert grad_norm_sq(np.full((N, N + 1), 0.4)) == pytest.approx(0.0, abs=1e-20)
    f = _cos_rows(N, N + 1)
    lam = (4 / h ** 2) * np.sin(np.pi * h) ** 2
    assert grad_norm_sq(f) == pytest.approx(lam * inner_omega(f, f), rel=1e-12)
    assert grad_norm_gamma_sq(f[:, 0]) == pytest.approx(lam * inner_gamma(f[:, 0], f[:, 0]), rel=1e-12)


@pytest.mark.parametrize('N', [4, 8])
def test_summation_by_parts_laplacian(rng, N):
    psi = rng.uniform(-1, 1, (N, N + 3))
    phi = rng.uniform(-1, 1, (N, N + 3))
    lhs = inner_omega(psi[:, 1:-1], laplacian_5pt(phi))
    bracket = edge_inner(gradient(psi), gradient(phi))
    top = inner_gamma(boundary_normal_derivative(phi, 'top'), psi[:, -2])
    bottom = inner_gamma(boundary_normal_derivative(phi, 'bottom'), psi[:, 1])
    scale = max(abs(lhs), abs(bracket), abs(top), abs(bottom))
    assert abs(lhs + bracket - top + bottom) <= 1e-12 * scale


@pytest.mark.parametrize('N', [4, 8])
def test_summation_by_parts_divergence(rng, N):
    psi = rng.uniform(-1, 1, (N, N + 3))
    fx = rng.uniform(-1, 1, (N, N + 1))
    fy = rng.uniform(-1, 1, (N, N + 2))
    lhs = inner_omega(psi[:, 1:-1], divergence(np.ones((N, N + 3)), (fx, fy)))
    bracket = edge_inner(gradient(psi), (fx, fy))
    ay, _ = cell_ops(fy, 'y')
    top = inner_gamma(ay[:, -1], psi[:, -2])
    bottom = inner_gamma(ay[:, 0], psi[:, 1])
    scale = max(abs(lhs), abs(bracket), abs(top), abs(bottom))
    assert abs(lhs + bracket - top + bottom) <= 1e-12 * scale


def test_attach_ghosts_layout(rng):
    f = rng.uniform(-1, 1, (4, 5))
    g = attach_ghosts(f, np.full(4, 9.0), np.full(4, -9.0))
    assert g.shape == (4, 7)
    assert_allclose(g[:, 1:-1], f)
    assert_allclose(g[:, 0], 9.0)
    assert_allclose(g[:, -1], -9.0)
    with pytest.raises(CompatibilityError):
        attach_ghosts(np.ones((4, 4)), np.ones(4), np.ones(4))
