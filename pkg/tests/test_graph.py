import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spinboson.graph import (ConstantHandle, Contractor, GraphFunction, ResolventHandle, contract,
                             identity_handle, integrand_trace, kmod, substitute, substitute_many)
from spinboson.model import scalar_exp, two_level_exp
from spinboson.pairings import canonical, enumerate_pair_partitions, enumerate_pairings, n_set
from spinboson.quadrature import QuadratureConfig, quadrature_config, radial_measure


class TestQuadrature:
    def test_gamma_integrals(self):
        s, w = QuadratureConfig(64).nodes()
        assert abs(np.sum(w * s * s * np.exp(-2 * s)) - 0.25) < 1e-10
        assert abs(np.sum(w * s * np.exp(-2 * s)) - 0.25) < 1e-10
        assert np.all(s > 0)

    def test_measure(self):
        s, w = radial_measure(QuadratureConfig(64))
        assert math.isclose(np.sum(w * np.exp(-2 * s)), math.pi, rel_tol=1e-12)

    def test_truncation_rule(self):
        cfg = quadrature_config(32, truncation=2.0)
        s, w = cfg.nodes()
        assert s.max() < 2.0 and s.min() > 0
        assert math.isclose(np.sum(w * s), 2.0, rel_tol=1e-12)

    def test_invalid(self):
        with pytest.raises(ValueError):
            QuadratureConfig(4)
        with pytest.raises(ValueError):
            QuadratureConfig(16, mapping="tan")
        with pytest.raises(ValueError):
            QuadratureConfig(16, scale=0.0)

    def test_digest_stable(self):
        assert QuadratureConfig(64).digest() == QuadratureConfig(64).digest()
        assert QuadratureConfig(64).digest() != QuadratureConfig(128).digest()


def chain(model, carrier, eta=0.0, power=1):
    edges = [ResolventHandle(model, eta, power) for _ in range(len(carrier) - 1)]
    return GraphFunction.from_internal(carrier, edges, model.dimension)


class TestSubstitute:
    def test_bridge_product(self):
        d = 2
        rng = np.random.default_rng(1)
        mats = [rng.normal(size=(d, d)) for _ in range(6)]
        handles = [ConstantHandle(m, f"F{i}") for i, m in enumerate(mats)]
        phi = GraphFunction(n_set(5), tuple(handles))
        K = ConstantHandle(rng.normal(size=(d, d)), "K")
        out = substitute(phi, (2, 3), K)
        assert out.carrier == (1, 4, 5)
        x = np.array([0.3])
        assert np.allclose(out.edges[1](x)[0], mats[1] @ K.matrix @ mats[3])
        assert out.edges[0] is handles[0] and out.edges[2] is handles[4]

    def test_identity_only_deletes(self):
        phi = GraphFunction.from_internal(n_set(4), [identity_handle(1)] * 3, 1)
        out = substitute(phi, (2,), identity_handle(1))
        assert out.carrier == (1, 3, 4)
        assert np.allclose(out.edges[1](np.array([1.0])), 1.0)

    def test_commutes(self):
        m, _ = two_level_exp()
        phi = chain(m, n_set(6), eta=0.2)
        K1 = ConstantHandle(np.array([[1.0, 2.0], [0.0, 1.0]]))
        K2 = ConstantHandle(np.array([[0.5, 0.0], [1.0, -1.0]]))
        a = substitute(substitute(phi, (2,), K1), (4, 5), K2)
        b = substitute(substitute(phi, (4, 5), K2), (2,), K1)
        x = np.linspace(0, 2, 5)
        for ea, eb in zip(a.edges, b.edges):
            assert np.allclose(ea(x), eb(x))

    def test_rejects_non_interval(self):
        phi = chain(scalar_exp()[0], n_set(4))
        with pytest.raises(ValueError):
            substitute(phi, (1, 3), identity_handle(1))


class TestKmod:
    def test_example(self):
        P = canonical([(1, 3), (2, 4)])
        assert set(kmod((2, 3), P)) == {(1, 3), (2, 4)}
        assert kmod((1, 2), P) == [(1, 3)]
        assert kmod((1, 2), canonical([(3, 4)])) == []

    def test_exhaustive_n6(self):
        for P in enumerate_pairings(n_set(6)):
            for a in range(1, 6):
                e = (a, a + 1)
                direct = [p for p in P if p[0] <= e[0] and e[1] <= p[1]]
                assert sorted(kmod(e, P)) == sorted(direct)

    def test_trace_structure(self):
        m, _ = scalar_exp()
        tr = integrand_trace(canonical([(1, 3), (2, 4)]), chain(m, n_set(4)))
        # momenta collapse to one variable per pair: |k3|, |k3| + |k4|, |k4| on the inner edges
        assert [e["argument"] for e in tr["edges"]] == [["r"], ["s0", "r"], ["s0", "s1", "r"], ["s1", "r"], ["r"]]
        assert [(v["slot"], v["variable"]) for v in tr["vertices"]] == [
            ("G*", "s0"), ("G*", "s1"), ("G", "s0"), ("G", "s1")]


class TestContract:
    def test_identity_pair(self):
        m, c = scalar_exp()
        phi = GraphFunction.from_internal((1, 2), [identity_handle(1)], 1)
        assert math.isclose(contract(((1, 2),), phi, 0.0, c).real.item(), math.pi, rel_tol=1e-12)

    def test_resolvent_pair(self):
        m, c = scalar_exp()
        val = contract(((1, 2),), chain(m, (1, 2)), 0.0, c)
        assert math.isclose(val.real.item(), -math.pi, rel_tol=1e-12)
        fine = contract(((1, 2),), chain(m, (1, 2)), 0.0, c, QuadratureConfig(128))
        assert abs(val - fine).max() < 1e-10

    def test_not_partition_is_zero(self):
        m, c = scalar_exp()
        assert np.all(contract(((1, 2),), chain(m, n_set(4), 0.3), 0.0, c) == 0)

    def test_external_lines_at_r(self):
        m, c = two_level_exp()
        ext = ResolventHandle(m, 0.0)
        phi = GraphFunction((1, 2), (ext, ResolventHandle(m, 0.0), ext))
        r = 0.7
        inner = contract(((1, 2),), GraphFunction.from_internal((1, 2), [ResolventHandle(m, 0.0)], 2), r, c)
        R = m.propagator(np.array([r]), 0.0)[0]
        assert np.allclose(contract(((1, 2),), phi, r, c), R @ inner @ R)

    def test_array_r_matches_scalar(self):
        m, c = two_level_exp()
        ctr = Contractor(c, QuadratureConfig(16))
        phi = chain(m, n_set(4), 0.1)
        P = canonical([(1, 3), (2, 4)])
        rs = np.array([0.0, 0.4, 1.3])
        many = ctr.contract(P, phi, rs)
        for i, r in enumerate(rs):
            assert np.allclose(many[i], ctr.contract(P, phi, float(r)))

    def test_workers_bit_identical(self):
        m, c = two_level_exp()
        phi = chain(m, n_set(6), 0.05)
        P = canonical([(1, 4), (2, 6), (3, 5)])
        a = Contractor(c, QuadratureConfig(16), 1).contract(P, phi, 0.0, parallel=True)
        ctr = Contractor(c, QuadratureConfig(16), 4)
        b = ctr.contract(P, phi, 0.0, parallel=True)
        ctr.close()
        assert np.array_equal(a, b)

    def test_brute_force_small(self):
        # two pairs, double loop by hand
        m, c = two_level_exp()
        cfg = QuadratureConfig(12)
        s, w = radial_measure(cfg)
        G = c.matrix(s)
        Gs = c.adjoint(s)
        eta = 0.3
        P = canonical([(1, 3), (2, 4)])
        R = lambda x: m.propagator(np.array([x]), eta)[0]
        tot = 0
        for i, j in itertools.product(range(len(s)), repeat=2):
            tot = tot + w[i] * w[j] * (Gs[i] @ R(s[i]) @ Gs[j] @ R(s[i] + s[j]) @ G[i] @ R(s[j]) @ G[j])
        got = contract(P, chain(m, n_set(4), eta), 0.0, c, cfg)
        assert np.allclose(got, tot, rtol=1e-12, atol=1e-14)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 1.0))
def test_hermitian_pair_sum(seed, eta):
    # the sum over all pair partitions of a symmetric chain is Hermitian for Hermitian B
    m, c = two_level_exp(bz=(seed % 7) / 7)
    ctr = Contractor(c, QuadratureConfig(10))
    phi = chain(m, n_set(4), eta)
    tot = sum(ctr.contract(P, phi, 0.2) for P in enumerate_pair_partitions(n_set(4)))
    assert np.allclose(tot, tot.conj().T, atol=1e-12)
