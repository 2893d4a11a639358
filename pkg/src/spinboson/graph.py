"""Graph functions, substitution and Wick contractions.

A graph function on an ordered carrier ``(x_1, ..., x_L)`` carries one
interaction vertex per carrier element and ``L + 1`` edge handles:
``edges[0]`` and ``edges[L]`` are the external lines, ``edges[i]`` joins
``x_i`` and ``x_{i+1}``.  Every vertex is the field coupling ``a*(G) + a(G)``;
after Wick reduction a vertex is ``G^*`` if it opens a pair and ``G`` if it
closes one, and every edge handle is a matrix-valued function of the photon
energy flowing across it.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import AtomicModel, RadialCoupling
from .pairings import Pairing, canonical, is_interval_of, support
from .quadrature import QuadratureConfig, radial_measure


class QuadratureError(RuntimeError):
    """Successive node refinements disagree by more than the tolerance."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# -- handles -----------------------------------------------------------------

class Handle:
    """Matrix-valued function of one non-negative argument.

    ``__call__`` maps a 1-d array of arguments to an array of shape
    ``(len(x), d, d)``.  Handles are immutable and safe to share between
    threads.
    """

    zero = False
    label = "F"

    def __init__(self, dim: int):
        self.dim = dim

    def __call__(self, x: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def __repr__(self):
        return f"<{self.label}>"


class ConstantHandle(Handle):
    def __init__(self, matrix, label: Optional[str] = None):
        m = np.atleast_2d(np.asarray(matrix, dtype=complex))
        super().__init__(m.shape[0])
        self.matrix = m
        self.zero = not np.any(m)
        self.label = label or ("0" if self.zero else "const")

    def __call__(self, x):
        return np.broadcast_to(self.matrix, (np.size(x),) + self.matrix.shape)


def identity_handle(dim: int) -> ConstantHandle:
    return ConstantHandle(np.eye(dim), "1")


def scalar_handle(c: complex, dim: int, label: Optional[str] = None) -> ConstantHandle:
    return ConstantHandle(c * np.eye(dim), label or f"{c:g}")


def zero_handle(dim: int) -> ConstantHandle:
    return ConstantHandle(np.zeros((dim, dim)), "0")


class ResolventHandle(Handle):
    """``x -> R(x + shift, eta)**power`` restricted to ``part``."""

    def __init__(self, model: AtomicModel, eta: float, power: int = 1,
                 part: str = "full", shift: float = 0.0):
        super().__init__(model.dimension)
        self.model, self.eta, self.power, self.part, self.shift = model, float(eta), power, part, float(shift)
        sym = {"full": "R", "perp": "R_perp", "par": "R_par"}[part]
        self.label = sym + ("^2" if power == 2 else "" if power == 1 else f"^{power}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.model.propagator(x + self.shift if self.shift else x, self.eta, self.part, self.power)


class FunctionHandle(Handle):
    """Wraps ``fn(x) -> (len(x), d, d)``; used for renormalised insertions."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], dim: int, label: str, zero: bool = False):
        super().__init__(dim)
        self.fn, self.label, self.zero = fn, label, zero

    def __call__(self, x):
        if self.zero:
            return np.zeros((np.size(x), self.dim, self.dim), dtype=complex)
        return self.fn(np.asarray(x, dtype=float))


class ProductHandle(Handle):
    """Pointwise product, left to right."""

    def __init__(self, factors: Sequence[Handle]):
        flat = []
        for f in factors:
            flat.extend(f.factors if isinstance(f, ProductHandle) else [f])
        # constant identities drop out
        keep = [f for f in flat if not (isinstance(f, ConstantHandle) and f.label == "1")]
        super().__init__(flat[0].dim)
        self.factors = keep or [flat[0]]
        self.zero = any(f.zero for f in flat)
        self.label = "*".join(f.label for f in self.factors)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = self.factors[0](x)
        for f in self.factors[1:]:
            out = out @ f(x)
        return out


class SumHandle(Handle):
    """``sum_i c_i F_i``."""

    def __init__(self, terms: Sequence[tuple[complex, Handle]]):
        super().__init__(terms[0][1].dim)
        self.terms = list(terms)
        self.zero = all(c == 0 or h.zero for c, h in terms)
        self.label = "+".join(f"{c:g}{h.label}" for c, h in terms)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((x.size, self.dim, self.dim), dtype=complex)
        for c, h in self.terms:
            out = out + c * h(x)
        return out


# -- graph functions ---------------------------------------------------------

@dataclass(frozen=True)
class GraphFunction:
    carrier: tuple
    edges: tuple

    def __post_init__(self):
        carrier = tuple(self.carrier)
        if list(carrier) != sorted(set(carrier)):
            raise ValueError("carrier must be strictly increasing")
        if len(self.edges) != len(carrier) + 1:
            raise ValueError(f"need {len(carrier) + 1} edge handles, got {len(self.edges)}")
        object.__setattr__(self, "carrier", carrier)
        object.__setattr__(self, "edges", tuple(self.edges))

    @property
    def dim(self) -> int:
        return self.edges[0].dim

    @classmethod
    def from_internal(cls, carrier, internal: Sequence[Handle], dim: int) -> "GraphFunction":
        """Graph with identity external lines."""
        one = identity_handle(dim)
        return cls(tuple(carrier), (one,) + tuple(internal) + (one,))

    def edge_between(self, x, y) -> Handle:
        i = self.carrier.index(x)
        if self.carrier[i + 1] != y:
            raise ValueError(f"{x} and {y} are not neighbours")
        return self.edges[i + 1]


def substitute(phi: GraphFunction, I: Sequence[int], K: Handle) -> GraphFunction:
    """Remove the interval ``I`` and fuse its two boundary edges with ``K``.

    The new edge handle is ``F_left * K * F_right``; if ``I`` touches an end of
    the carrier the fused edge is the new external line.
    """
    I = tuple(sorted(I))
    if not is_interval_of(I, phi.carrier):
        raise ValueError(f"{I} is not an interval of {phi.carrier}")
    i = phi.carrier.index(I[0])
    j = i + len(I) - 1
    bridge = ProductHandle([phi.edges[i], K, phi.edges[j + 1]])
    carrier = phi.carrier[:i] + phi.carrier[j + 1:]
    edges = phi.edges[:i] + (bridge,) + phi.edges[j + 2:]
    return GraphFunction(carrier, edges)


def substitute_many(phi: GraphFunction, items: Sequence[tuple[Sequence[int], Handle]]) -> GraphFunction:
    for I, K in items:
        phi = substitute(phi, I, K)
    return phi


def kmod(e: tuple, P: Pairing) -> list:
    """Pairs whose span covers the edge ``e = (x, y)``."""
    lo, hi = min(e), max(e)
    return [p for p in canonical(P) if p[0] <= lo and hi <= p[1]]


def integrand_trace(P: Pairing, phi: GraphFunction) -> dict:
    """Symbolic structure of the contraction integrand (for golden tests)."""
    P = canonical(P)
    names = {p: f"s{a}" for a, p in enumerate(P)}
    verts = []
    for x in phi.carrier:
        p = next((q for q in P if x in q), None)
        slot = None if p is None else ("G*" if x == p[0] else "G")
        verts.append({"vertex": x, "slot": slot, "variable": names.get(p)})
    edges = [{"edge": ["-inf", phi.carrier[0] if phi.carrier else "inf"], "handle": phi.edges[0].label, "argument": ["r"]}]
    for i in range(len(phi.carrier) - 1):
        e = (phi.carrier[i], phi.carrier[i + 1])
        edges.append({"edge": list(e), "handle": phi.edges[i + 1].label,
                      "argument": [names[p] for p in kmod(e, P)] + ["r"]})
    if phi.carrier:
        edges.append({"edge": [phi.carrier[-1], "inf"], "handle": phi.edges[-1].label, "argument": ["r"]})
    return {"pairs": [list(p) for p in P], "measure": "prod_p 4*pi*s_p^2 ds_p",
            "vertices": verts, "edges": edges}


# -- numerical contraction ---------------------------------------------------

_POINTS_PER_BLOCK = 1 << 17
_TOP_BLOCK = 4


class Contractor:
    """Evaluates contractions for one coupling and quadrature rule.

    ``workers > 1`` spreads the outermost quadrature blocks over threads.  Block
    boundaries depend only on the problem shape and partial sums are added in
    block order, so results do not depend on the worker count.
    """

    def __init__(self, coupling: RadialCoupling, quad: QuadratureConfig, workers: int = 1):
        if coupling.uv_cutoff is not None and quad.truncation is None:
            quad = QuadratureConfig(quad.nodes_per_dim, quad.mapping, quad.scale, coupling.uv_cutoff)
        self.coupling, self.quad, self.workers = coupling, quad, max(1, int(workers))
        self.s, self.w = radial_measure(quad)
        self.g = np.ascontiguousarray(coupling.matrix(self.s))
        self.gs = np.ascontiguousarray(coupling.adjoint(self.s))
        self.dim = coupling.dimension
        self._pool = None

    def with_quadrature(self, quad: QuadratureConfig) -> "Contractor":
        return Contractor(self.coupling, quad, self.workers)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def _executor(self):
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.workers)
        return self._pool

    def contract(self, P: Pairing, phi: GraphFunction, r=0.0, parallel: bool = False) -> np.ndarray:
        """``C_P(phi)(r)`` as a ``(d, d)`` matrix, or ``(len(r), d, d)`` for array ``r``.

        Returns zeros if ``P`` is not a pair partition of the carrier or if a
        handle is identically zero.
        """
        scalar_r = np.ndim(r) == 0
        r = np.atleast_1d(np.asarray(r, dtype=float))
        d = self.dim
        out = np.zeros((r.size, d, d), dtype=complex)
        P = canonical(P)
        if support(P) != set(phi.carrier) or any(e.zero for e in phi.edges):
            return out[0] if scalar_r else out
        if not P:
            val = phi.edges[0](r)
            return val[0] if scalar_r else val
        M, N, k = r.size, self.s.size, len(P)
        rest = M * N ** (k - 1)
        block = max(1, min(N, _POINTS_PER_BLOCK // max(rest, 1)))
        if parallel:  # same partition for every worker count
            block = min(block, _TOP_BLOCK)
        starts = list(range(0, N, block))
        job = _Job(self, P, phi, r)
        if parallel and self.workers > 1 and len(starts) > 1:
            parts = list(self._executor().map(lambda a: job.block(a, min(a + block, N)), starts))
        else:
            parts = [job.block(a, min(a + block, N)) for a in starts]
        for part in parts:
            out = out + part
        return out[0] if scalar_r else out


class _Job:
    def __init__(self, ctr: Contractor, P: Pairing, phi: GraphFunction, r: np.ndarray):
        self.ctr, self.P, self.phi, self.r = ctr, P, phi, r
        pos = {x: i for i, x in enumerate(phi.carrier)}
        self.pairs = [(pos[a], pos[b]) for a, b in P]
        self.owner = {}
        for ax, (i, j) in enumerate(self.pairs):
            self.owner[i] = (ax, True)
            self.owner[j] = (ax, False)

    def block(self, a0: int, a1: int) -> np.ndarray:
        ctr, r = self.ctr, self.r
        k = len(self.pairs)
        M, N, d = r.size, ctr.s.size, ctr.dim
        # per-axis node slices: the first pair axis is blocked
        sl = [slice(a0, a1)] + [slice(0, N)] * (k - 1)
        s_ax = [ctr.s[q] for q in sl]
        lens = [len(x) for x in s_ax]

        def shape_for(axes, lead=M):
            shp = [lead] + [1] * k
            for ax in axes:
                shp[1 + ax] = lens[ax]
            return shp

        def edge_value(h: Handle, axes: list) -> np.ndarray:
            axes = sorted(axes)
            y = r.reshape((M,) + (1,) * len(axes))
            for n_, ax in enumerate(axes):
                shp = [1] * (len(axes) + 1)
                shp[1 + n_] = lens[ax]
                y = y + s_ax[ax].reshape(shp)
            y = np.broadcast_to(y, (M,) + tuple(lens[ax] for ax in axes))
            vals = h(np.ascontiguousarray(y).reshape(-1))
            return vals.reshape(shape_for(axes) + [d, d])

        acc = edge_value(self.phi.edges[0], [])
        L = len(self.phi.carrier)
        for i in range(L):
            ax, opens = self.owner[i]
            g = (ctr.gs if opens else ctr.g)[sl[ax]]
            acc = acc @ g.reshape(shape_for([ax], 1) + [d, d])
            if i < L - 1:
                covering = [b for b, (p0, p1) in enumerate(self.pairs) if p0 <= i and i + 1 <= p1]
                acc = acc @ edge_value(self.phi.edges[i + 1], covering)
        acc = acc @ edge_value(self.phi.edges[-1], [])
        weight = np.ones([1] * (k + 1))
        for ax in range(k):
            weight = weight * ctr.w[sl[ax]].reshape(shape_for([ax], 1))
        acc = np.broadcast_to(acc, [M] + lens + [d, d]) * weight[..., None, None]
        # contiguous trailing axis -> pairwise summation
        flat = np.ascontiguousarray(np.moveaxis(acc.reshape(M, -1, d, d), 1, -1))
        return flat.sum(axis=-1)


def contract(P: Pairing, phi: GraphFunction, r: float, coupling: RadialCoupling,
             quad: Optional[QuadratureConfig] = None, workers: int = 1) -> np.ndarray:
    """One-shot ``C_P(phi)(r)``; see :meth:`Contractor.contract`."""
    ctr = Contractor(coupling, quad or QuadratureConfig(), workers)
    try:
        return ctr.contract(P, phi, r, parallel=True)
    finally:
        ctr.close()


def contract_refined(P: Pairing, phi: GraphFunction, r: float, coupling: RadialCoupling,
                     quad: Optional[QuadratureConfig] = None, rtol: float = 1e-8, atol: float = 1e-10):
    """Contract at ``n`` and ``2n`` nodes; raise :class:`QuadratureError` on disagreement."""
    quad = quad or QuadratureConfig()
    a = contract(P, phi, r, coupling, quad)
    b = contract(P, phi, r, coupling, quad.refined())
    diff = float(np.max(np.abs(a - b)))
    trace = [(quad.nodes_per_dim, a), (2 * quad.nodes_per_dim, b)]
    if diff > atol + rtol * float(np.max(np.abs(b))):
        raise QuadratureError(f"node doubling changed the contraction by {diff:.3e}", trace)
    return b, diff
