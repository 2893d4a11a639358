import math

import numpy as np
import pytest
from scipy import integrate

from spinboson.model import scalar_exp, two_level_exp
from spinboson.pairings import n_set
from spinboson.quadrature import QuadratureConfig
from spinboson.renorm import (RenormEngine, _linked_terms, gs_graph_function, richardson, window_key,
                              window_labels)
from spinboson.graph import ResolventHandle


@pytest.fixture(scope="module")
def scalar():
    eng = RenormEngine(*scalar_exp(), QuadratureConfig(64))
    eng.energy_coefficient(4)
    return eng


@pytest.fixture(scope="module")
def two_level():
    eng = RenormEngine(*two_level_exp(), QuadratureConfig(48))
    eng.energy_coefficient(4)
    return eng


def test_windows():
    assert window_labels((2, 3)) == (-2, -1, 1, 2, 3)
    assert window_key((-3, -2)) == (0, 2)
    assert window_key((-1, 1, 2)) == (1, 2)
    assert window_key((4, 5, 6)) == (0, 3)


def test_low_orders(scalar):
    assert scalar.energy_coefficient(1) == 0.0
    assert abs(scalar.energy_coefficient(2) + math.pi) < 1e-12
    assert scalar.energy_coefficient(3) == 0.0
    assert np.all(scalar.linked_graph_cn(3, 0.2, 0.1) == 0)


def test_c2_formula(two_level):
    # C_2(r, eta) = 4 pi int s^2 G*(s) R(s + r, eta) G(s) ds
    m, c = two_level_exp()
    r, eta = 0.3, 0.2
    s, w = QuadratureConfig(48).nodes()
    R = m.propagator(s + r, eta)
    ref = np.einsum("k,kij,kjl,klm->im", 4 * math.pi * s * s * w, c.adjoint(s), R, c.matrix(s))
    assert np.allclose(two_level.linked_graph_cn(2, r, eta), ref, atol=1e-13)
    assert np.allclose(two_level.g_n(2, r, eta), two_level.linked_graph_cn(2, r, eta))
    assert np.allclose(two_level.regularized_Tn(2, eta), two_level.linked_graph_cn(2, 0.0, eta))


def test_scalar_e4_cancellation(scalar):
    # crossing graph and nested T^_2 insertion cancel for the exactly solvable scalar atom
    base = scalar.window_graph((0, 4), 0.0)
    from spinboson.graph import substitute_many
    vals = []
    for P, runs in _linked_terms((0, 4)):
        phi = substitute_many(base, [(I, scalar._insertion(k, 0.0)) for I, k in runs])
        vals.append(scalar.ctr.contract(P, phi, 0.0).real.item())
    assert sorted(vals)[0] == pytest.approx(-(4 * math.pi) ** 2 / 24, rel=1e-8)
    assert sorted(vals)[1] == pytest.approx((4 * math.pi) ** 2 / 24, rel=1e-8)
    assert abs(scalar.E[4]) < 1e-12


def test_renormalization_pinning(two_level):
    for n in (2, 4):
        gh = two_level.g_hat(n, 0.0, 0.0)
        phi = two_level.phi
        assert abs(np.vdot(phi, gh @ phi)) < 1e-12
        P = two_level.model.p_at
        assert np.allclose(P @ gh @ P, 0.0, atol=1e-12)


def test_taylor_smallness(two_level):
    phi = two_level.phi
    pts = [(1e-3, 0.0), (0.0, 1e-3), (2e-3, 2e-3), (1e-2, 5e-3)]
    ratios = [abs(np.vdot(phi, two_level.g_hat(4, r, e) @ phi)) / (r + e) for r, e in pts]
    assert max(ratios) < 50


def test_resummed_forms_agree(two_level):
    for r, eta in [(0.0, 0.3), (0.5, 0.1), (1.7, 0.9)]:
        a = two_level.regularized_Tn(4, eta, r)
        assert np.allclose(two_level.tn_resummed(4, r, eta, "C"), a, atol=1e-10)
        assert np.allclose(two_level.tn_resummed(4, r, eta, "G"), a, atol=1e-10)
        that = two_level.that_n(4, r, eta)
        assert np.allclose(that, a - two_level.E[4] * np.eye(2), atol=1e-10)


def test_that_at_zero_r_has_no_parallel_part(two_level):
    assert np.allclose(two_level.that_n(4, 0.0, 0.2), two_level.g_hat(4, 0.0, 0.2))


def test_reality(two_level):
    assert all(isinstance(two_level.E[k], float) for k in range(5))


def test_bottom_up_required():
    eng = RenormEngine(*scalar_exp(), QuadratureConfig(16))
    with pytest.raises(RuntimeError):
        eng.C((0, 4), 0.0, 0.0)


def test_regularized_needs_eta(scalar):
    with pytest.raises(ValueError):
        scalar.regularized_Tn(4, 0.0)


def test_eta_route_n2_and_odd(scalar):
    est = scalar.energy_coefficient_eta(2)
    assert abs(est.value + math.pi) < 1e-6
    odd = scalar.energy_coefficient_eta(3)
    assert all(v == 0 for v in odd.samples) and not odd.flagged
    with pytest.raises(ValueError):
        scalar.energy_coefficient_eta(2, [0.1, 0.2, 0.4])


def test_eta_route_drift(scalar):
    etas = [0.2, 0.1, 0.05]
    vals, big = [], []
    for eta in etas:
        mat, parts = scalar.regularized_Tn(4, eta, terms=True)
        vals.append(mat.real.item())
        big.append(max(abs(v.real.item()) for _, _, v in parts))
    assert abs(vals[2]) < abs(vals[1]) < abs(vals[0])   # drifting toward E_4 = 0
    assert big[0] < big[1] < big[2]                     # individual terms grow


def test_richardson_exact_for_eta_log_eta():
    f = lambda h: 2.0 + 3 * h * math.log(h) - 5 * h
    etas = [0.1 * 2.0 ** -j for j in range(6)]
    tab = richardson([f(h) for h in etas], powers=(1, 1))
    assert abs(tab[-1][-1] - 2.0) < 1e-12


def test_norms(scalar):
    assert scalar.gs_norm(0) == 1.0
    assert abs(scalar.gs_norm(1) - 2 * math.pi) < 1e-10
    assert abs(scalar.gs_norm(2) - 2 * math.pi ** 2) < 1e-8
    with pytest.raises(ValueError):
        scalar.gs_norm(4)


def test_norm_eta_half(scalar):
    oracle = 4 * math.pi * integrate.quad(lambda s: s * s * math.exp(-2 * s) / (s + 0.5) ** 2, 0, math.inf,
                                          epsabs=1e-14, epsrel=1e-13)[0]
    assert abs(scalar.gs_norm(1, 0.5) - oracle) < 1e-8
    assert abs(scalar.gs_norm(1, 0.5, route="T") - oracle) < 1e-8


def test_norm_routes_agree(two_level):
    for eta in (0.3, 0.05):
        g = two_level.gs_norm(2, eta, route="G")
        t = two_level.gs_norm(2, eta, route="T")
        assert abs(g - t) < 1e-9 * max(1, abs(g))
    with pytest.raises(ValueError):
        two_level.gs_norm(1, 0.0, route="T")


def test_gs_graph_function():
    m, _ = two_level_exp()
    g = gs_graph_function(m, -1, 1, 0.0, 0.1)
    assert g.carrier == (-1, 1) and g.edges[1].power == 2
    g = gs_graph_function(m, -3, 2, 0.2, 0.1)
    assert g.carrier == (-3, -2, -1, 1, 2)
    assert [e.power for e in g.edges[1:-1]] == [1, 1, 2, 1]
    g = gs_graph_function(m, 1, 4, 0.0, 0.1)
    assert g.carrier == n_set(4) and all(e.power == 1 for e in g.edges[1:-1])
    with pytest.raises(ValueError):
        gs_graph_function(m, 0, 3, 0.0, 0.1)
    x = np.array([0.4])
    assert np.allclose(gs_graph_function(m, -1, 1, 0.3, 0.1).edges[1](x), m.propagator(x + 0.3, 0.1, power=2))
