import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinboson.matrix_pt import (DegenerateError, DiagonalProblem, FiniteProblem, asymptotic_residuals,
                                 feshbach_coefficients, fitted_coefficients, random_problem,
                                 rs_coefficients, two_level_exact, two_level_problem)

TWO_LEVEL = [0.0, 0.0, -1.0, 0.0, 1.0, 0.0, -2.0]


@pytest.mark.parametrize("method", [rs_coefficients, feshbach_coefficients])
def test_two_level(method):
    res = method(two_level_problem(), 6)
    assert np.allclose(res.energies, TWO_LEVEL, atol=1e-12)
    assert max(res.residuals(two_level_problem())) < 1e-12


def test_zero_perturbation():
    p = FiniteProblem(np.diag([0.0, 1.0, 3.0]), np.zeros((3, 3)))
    res = rs_coefficients(p, 4)
    assert all(e == 0 for e in res.energies[1:])
    assert all(np.all(v == 0) for v in res.vectors[1:])


def test_closed_form_oracle():
    lam = np.array([0.01, 0.02])
    # eigenvalue of diag(0,1) + lam sigma_x
    assert np.allclose(two_level_exact(lam), [np.linalg.eigvalsh(np.diag([0, 1.0]) + l * np.array([[0, 1], [1, 0]]))[0] for l in lam])


def test_random_4x4_matches_fit():
    p = random_problem(4, seed=11)
    oracle = fitted_coefficients(p, 4)
    res = rs_coefficients(p, 4)
    np.testing.assert_allclose(res.energies[:4], oracle[:4], rtol=1e-6, atol=1e-12)


def test_cross_method_5x5():
    p = random_problem(5, seed=3)
    a, b = rs_coefficients(p, 6), feshbach_coefficients(p, 6)
    assert max(abs(x - y) for x, y in zip(a.energies, b.energies)) < 1e-10
    assert np.isclose(b.energies[1], np.vdot(p.psi0, p.v @ p.psi0).real)


def test_rejections():
    with pytest.raises(DegenerateError):
        FiniteProblem(np.diag([0.0, 0.0, 1.0]), np.eye(3))
    with pytest.raises(ValueError):
        FiniteProblem(np.array([[0, 1.0], [0, 1]]), np.eye(2))
    with pytest.raises(ValueError):
        rs_coefficients(two_level_problem(), 0)
    with pytest.raises(DegenerateError):
        DiagonalProblem([1.0, 1.0, 2.0], np.eye(3))


def test_diagonal_problem_agrees():
    rng = np.random.default_rng(5)
    d = np.array([0.0, 0.7, 1.3, 2.2])
    v = rng.normal(size=(4, 4))
    v = v + v.T
    a = rs_coefficients(DiagonalProblem(d, v), 5).energies
    b = rs_coefficients(FiniteProblem(np.diag(d), v), 5).energies
    assert np.allclose(a, b, atol=1e-12)


def test_asymptotic_residuals_two_level():
    p = two_level_problem()
    e = rs_coefficients(p, 4).energies
    lam = np.geomspace(1e-1, 1e-3, 9)
    tab = asymptotic_residuals(p, e, 4, np.concatenate([lam, [0.0]]))
    assert 3.8 <= tab.slopes[2] <= 4.2
    assert tab.remainder[-1, 2] == 0.0
    with pytest.raises(ValueError):
        asymptotic_residuals(p, e, 2, [0.01, 0.1])


def test_random_slope():
    p = random_problem(4, seed=21)
    e = rs_coefficients(p, 3).energies
    tab = asymptotic_residuals(p, e, 3, np.geomspace(1e-1, 1e-3, 9))
    assert tab.slopes[3] >= 3.8


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_methods_agree_and_residuals_vanish(dim, seed):
    p = random_problem(dim, seed)
    a, b = rs_coefficients(p, 5), feshbach_coefficients(p, 5)
    scale = max(1.0, max(abs(x) for x in a.energies))
    assert max(abs(x - y) for x, y in zip(a.energies, b.energies)) <= 1e-10 * scale
    assert max(a.residuals(p)) < 1e-9 * scale
    # gauge: psi_m orthogonal to psi0 for m >= 1
    assert all(abs(np.vdot(p.psi0, v)) < 1e-10 for v in a.vectors[1:])
