"""Renormalised linked-graph expansion of ground-state energy and norm.

Every quantity lives on a *window*: a run of consecutive vertices of
``N_{-m,n} = [-m, n] \\ {0}``.  A window that does not straddle 0 behaves like
``N_L`` for its length ``L``; a straddling window carries the squared
resolvent on its ``{-1, 1}`` edge and gets no energy subtraction.  Windows are
keyed by ``(neg, pos)``, the counts of negative and positive labels, with
zero-free windows normalised to ``(0, L)``.

For a window ``W`` and matrix stacks over shifts ``x``:

* ``C_W``  linked pairings pairing both ends, unpaired runs replaced by the
  subtracted insertions ``T~`` evaluated at the shifted argument;
* ``C~_W`` is ``C_W - E_L`` on zero-free windows, ``C_W`` otherwise;
* ``G_W = C_W + sum over splits of W into >= 2 blocks of C~ (P_perp R~) ... C~``;
* ``T_W = G_W + the same sum with G~ and (P_par R~)``, or equivalently with
  ``C~`` and the full ``R~``;
* ``T~_W`` is ``T_W - E_L`` on zero-free windows.

The energy coefficients are ``E_n = <phi, G_(0,n)(0, 0) phi>`` and the norms are
``||psi_m||^2 = <phi, G_(m,m)(0, 0) phi>``.  The regularised route sums the
plain Wick expansion with scalar energy insertions at ``eta > 0``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .graph import (ConstantHandle, Contractor, FunctionHandle, GraphFunction, QuadratureError,
                    ResolventHandle, identity_handle, scalar_handle, substitute_many)
from .model import AtomicModel, RadialCoupling, require_valid
from .pairings import (enumerate_interval_collections, enumerate_pair_partitions,
                       linked_spanning_pairings, mn_set, support, unpaired_intervals)
from .quadrature import QuadratureConfig

Window = tuple  # (neg, pos)

# Start of the default eta schedule in units of min(gap, 1).  Larger starts sit
# outside the asymptotic regime of the n = 4 trace on both presets.
DEFAULT_ETA0 = 0.0125


def window_labels(w: Window) -> tuple:
    neg, pos = w
    return tuple(range(-neg, 0)) + tuple(range(1, pos + 1))


def window_key(labels: Sequence[int]) -> Window:
    labels = tuple(labels)
    neg = sum(1 for x in labels if x < 0)
    pos = len(labels) - neg
    if neg and pos:
        return (neg, pos)
    return (0, len(labels))


def straddles(w: Window) -> bool:
    return w[0] > 0 and w[1] > 0


def window_size(w: Window) -> int:
    return w[0] + w[1]


@lru_cache(maxsize=None)
def _linked_terms(w: Window):
    """Linked spanning pairings of ``w`` with the window keys of their unpaired runs."""
    labels = window_labels(w)
    out = []
    for P in linked_spanning_pairings(labels):
        runs = unpaired_intervals(P, labels)
        out.append((P, tuple((I, window_key(I)) for I in runs)))
    return tuple(out)


@lru_cache(maxsize=None)
def _splits(w: Window):
    """Splits of ``w`` into >= 2 consecutive blocks: (block keys, squared-edge flags)."""
    labels = window_labels(w)
    L = len(labels)
    out = []

    def rec(start, acc):
        if start == L:
            if len(acc) >= 2:
                keys = tuple(window_key(labels[a:b]) for a, b in acc)
                sq = tuple(labels[b - 1] == -1 and labels[b] == 1 for _, b in acc[:-1])
                out.append((keys, sq))
            return
        for stop in range(start + 1, L + 1):
            rec(stop, acc + [(start, stop)])

    rec(0, [])
    return tuple(out)


@lru_cache(maxsize=None)
def _wick_terms(w: Window):
    """(energy insertions, pair partition of the rest) for the regularised sum.

    Collections avoid intervals whose hull contains 0 and exclude the full window.
    """
    labels = window_labels(w)
    out = []
    for coll in enumerate_interval_collections(labels, "Q0", exclude_full=True):
        used = {x for I in coll for x in I}
        rest = tuple(x for x in labels if x not in used)
        for P in enumerate_pair_partitions(rest):
            out.append((coll, P))
    return tuple(out)


def richardson(values: Sequence[float], ratio: float = 2.0, powers: Sequence[int] = (1, 1, 2, 2)) -> list:
    """Successive eliminations ``(f R_{j+1} - R_j) / (f - 1)`` with ``f = ratio**p``.

    The default powers remove ``eta log eta`` and ``eta`` (two first-order
    passes) and then ``eta^2 log eta`` and ``eta^2``.  Passes stop early when
    the table runs out of entries.  Returns every level, raw samples first.
    """
    levels = [list(map(float, values))]
    for p in powers:
        prev = levels[-1]
        if len(prev) < 2:
            break
        f = ratio ** p
        levels.append([(f * b - a) / (f - 1) for a, b in zip(prev[:-1], prev[1:])])
    return levels


@dataclass
class EtaEstimate:
    value: float
    error: float
    etas: list
    samples: list
    table: list
    flagged: bool
    message: str = ""
    largest_terms: list = field(default_factory=list)


@dataclass
class EnergySeries:
    coefficients: list
    diagnostics: list = field(default_factory=list)


@dataclass
class NormSeries:
    eta: float
    values: list
    extrapolated: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


class RenormEngine:
    """Bottom-up evaluator that also serves as the insertion cache.

    Energies must be built in increasing order; :meth:`energy_coefficient`
    does this on demand.  ``insertion_route`` picks how the inserted ``T``
    values are formed: ``"G"`` (``P_par`` split, the default) or ``"C"``.
    """

    def __init__(self, model: AtomicModel, coupling: RadialCoupling,
                 quad: Optional[QuadratureConfig] = None, workers: int = 1,
                 insertion_route: str = "G", validate: bool = True, m_max: int = 3):
        if validate:
            require_valid(model, coupling)
        if insertion_route not in ("G", "C"):
            raise ValueError("insertion_route must be 'G' or 'C'")
        self.model, self.coupling = model, coupling
        self.quad = quad or QuadratureConfig()
        self.ctr = Contractor(coupling, self.quad, workers)
        self.route = insertion_route
        self.m_max = m_max
        self.d = model.dimension
        self.phi = model.phi_at
        self.E = {0: model.e_at, 1: 0.0}  # V is off-diagonal in photon number
        self.diagnostics: dict = {}
        self._memo: dict = {}

    def close(self):
        self.ctr.close()

    # -- helpers ---------------------------------------------------------

    def _energy(self, L: int) -> float:
        if L not in self.E:
            raise RuntimeError(f"E_{L} requested before it was computed; build orders bottom-up")
        return self.E[L]

    def _zeros(self, M):
        return np.zeros((M, self.d, self.d), dtype=complex)

    def _expect(self, mat) -> float:
        z = np.vdot(self.phi, mat @ self.phi)
        if abs(z.imag) > 1e-10 * max(1.0, abs(z.real)):
            raise ValueError(f"expectation has imaginary part {z.imag:.3e}")
        return float(z.real)

    def _memoised(self, tag, w, x, eta, fn):
        if x.size != 1:
            return fn()
        key = (tag, w, float(x[0]), float(eta))
        hit = self._memo.get(key)
        if hit is None:
            hit = fn()
            self._memo[key] = hit
        return hit

    def _edge(self, eta, squared, part="full"):
        return ResolventHandle(self.model, eta, 2 if squared else 1, part)

    def _between(self, x, eta, squared, part):
        return self.model.propagator(x, eta, part, 2 if squared else 1)

    def window_graph(self, w: Window, eta: float, r: float = 0.0) -> GraphFunction:
        """Graph on the window with ``R(. + r, eta)`` edges (squared on ``{-1, 1}``)."""
        labels = window_labels(w)
        edges = []
        for a, b in zip(labels[:-1], labels[1:]):
            edges.append(ResolventHandle(self.model, eta, 2 if (a, b) == (-1, 1) else 1, "full", r))
        return GraphFunction.from_internal(labels, edges, self.d)

    # -- window quantities ----------------------------------------------

    def C(self, w: Window, x, eta: float, parallel: bool = False) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if window_size(w) % 2:
            return self._zeros(x.size)
        return self._memoised("C", w, x, eta, lambda: self._C(w, x, eta, parallel))

    def _C(self, w, x, eta, parallel):
        out = self._zeros(x.size)
        base = self.window_graph(w, eta)
        for P, runs in _linked_terms(w):
            if any(window_size(k) % 2 for _, k in runs):
                continue  # odd insertions vanish identically
            phi = substitute_many(base, [(I, self._insertion(k, eta)) for I, k in runs])
            out = out + self.ctr.contract(P, phi, x, parallel=parallel)
        return out

    def C_tilde(self, w, x, eta, parallel=False):
        c = self.C(w, x, eta, parallel)
        return c if straddles(w) else c - self._energy(window_size(w)) * np.eye(self.d)

    def G(self, w, x, eta, parallel=False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if window_size(w) % 2:
            return self._zeros(x.size)
        return self._memoised("G", w, x, eta, lambda: self.C(w, x, eta, parallel)
                              + self._chain(w, x, eta, self.C_tilde, "perp", parallel))

    def G_tilde(self, w, x, eta, parallel=False):
        g = self.G(w, x, eta, parallel)
        return g if straddles(w) else g - self._energy(window_size(w)) * np.eye(self.d)

    def T(self, w, x, eta, route: Optional[str] = None, parallel=False):
        """``T_W`` through the ``P_par`` split (``"G"``) or the full resolvent (``"C"``)."""
        route = route or self.route
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if window_size(w) % 2:
            return self._zeros(x.size)
        if route == "G":
            return self._memoised("TG", w, x, eta, lambda: self.G(w, x, eta, parallel)
                                  + self._chain(w, x, eta, self.G_tilde, "par", parallel))
        return self._memoised("TC", w, x, eta, lambda: self.C(w, x, eta, parallel)
                              + self._chain(w, x, eta, self.C_tilde, "full", parallel))

    def T_tilde(self, w, x, eta, route=None, parallel=False):
        t = self.T(w, x, eta, route, parallel)
        return t if straddles(w) else t - self._energy(window_size(w)) * np.eye(self.d)

    def _chain(self, w, x, eta, block, part, parallel):
        out = self._zeros(x.size)
        for keys, sq in _splits(w):
            if any(window_size(k) % 2 for k in keys):
                continue
            acc = block(keys[0], x, eta, parallel)
            for k, s in zip(keys[1:], sq):
                acc = acc @ self._between(x, eta, s, part) @ block(k, x, eta, parallel)
            out = out + acc
        return out

    def _insertion(self, w: Window, eta: float):
        if window_size(w) % 2:
            return ConstantHandle(np.zeros((self.d, self.d)), "0")
        label = f"T~{w}" if straddles(w) else f"T^_{window_size(w)}"
        return FunctionHandle(lambda y: self.T_tilde(w, y, eta), self.d, label)

    def T_regularized(self, w: Window, x, eta: float, parallel: bool = False, terms: bool = False):
        """Plain Wick sum with scalar ``-E_|I|`` insertions (``eta > 0`` is expected).

        With ``terms=True`` also returns ``[(collection, pairing, matrix), ...]``.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        base = self.window_graph(w, eta)
        out = self._zeros(x.size)
        parts = []
        for coll, P in _wick_terms(w):
            if any(self._energy(len(I)) == 0 for I in coll):
                continue
            phi = substitute_many(base, [(I, scalar_handle(-self._energy(len(I)), self.d, f"-E{len(I)}"))
                                         for I in coll])
            val = self.ctr.contract(P, phi, x, parallel=parallel)
            out = out + val
            if terms:
                parts.append((coll, P, val))
        return (out, parts) if terms else out

    # -- energies --------------------------------------------------------

    def energy_coefficient(self, n: int) -> float:
        """``E_n = <phi, G_n(0, 0) phi>``, building lower orders first."""
        if n < 0:
            raise ValueError("order must be non-negative")
        for k in range(2, n + 1):
            if k in self.E:
                continue
            t0 = time.perf_counter()
            if k % 2:
                val = 0.0
            else:
                val = self._expect(self.G((0, k), 0.0, 0.0, parallel=True)[0])
            self.E[k] = val
            self.diagnostics[k] = {
                "n": k, "E_n": val, "method": "renormalized-direct",
                "pairing_count": len(_linked_terms((0, k))),
                "quadrature_nodes": self.quad.nodes_per_dim,
                "quadrature_hash": self.quad.digest(),
                "wall_time": time.perf_counter() - t0,
            }
        return self.E[n]

    def energy_series(self, n_max: int) -> EnergySeries:
        self.energy_coefficient(n_max)
        return EnergySeries([self.E[k] for k in range(n_max + 1)],
                            [self.diagnostics.get(k, {"n": k, "E_n": self.E[k], "method": "exact"})
                             for k in range(n_max + 1)])

    def _need(self, n):
        self.energy_coefficient(max(n - 1, 0))

    def linked_graph_cn(self, n: int, r: float, eta: float) -> np.ndarray:
        self._need(n)
        return self.C((0, n), r, eta)[0]

    def c_hat(self, n, r, eta):
        self.energy_coefficient(n)
        return self.C_tilde((0, n), r, eta)[0]

    def g_n(self, n: int, r: float, eta: float) -> np.ndarray:
        self._need(n)
        return self.G((0, n), r, eta)[0]

    def g_hat(self, n, r, eta):
        self.energy_coefficient(n)
        return self.G_tilde((0, n), r, eta)[0]

    def that_n(self, n: int, r: float, eta: float) -> np.ndarray:
        """``T^_n = G^_n + sum G^ R_par ... G^``."""
        self.energy_coefficient(n)
        return self.T_tilde((0, n), r, eta, route="G")[0]

    def tn_resummed(self, n: int, r: float, eta: float, route: str) -> np.ndarray:
        """``T_n(r, eta)`` through one of the two resummed forms."""
        self._need(n)
        return self.T((0, n), r, eta, route=route)[0]

    def regularized_Tn(self, n: int, eta: float, r: float = 0.0, terms: bool = False):
        if not eta > 0:
            raise ValueError("the regularised expansion needs eta > 0")
        self._need(n)
        res = self.T_regularized((0, n), r, eta, parallel=True, terms=terms)
        if terms:
            mat, parts = res
            return mat[0], [(c, P, v[0]) for c, P, v in parts]
        return res[0]

    def default_etas(self, levels: int = 6, eta0: Optional[float] = None) -> list:
        """``eta_j = eta0 2^-j`` with ``eta0 = DEFAULT_ETA0 * min(gap, 1)`` unless given."""
        if eta0 is None:
            eta0 = DEFAULT_ETA0 * min(self.model.gap, 1.0)
        return [eta0 * 2.0 ** (-j) for j in range(levels)]

    def energy_coefficient_eta(self, n: int, etas: Optional[Sequence[float]] = None,
                               powers: Sequence[int] = (1, 1, 2, 2)) -> EtaEstimate:
        """Richardson limit ``eta -> 0`` of ``<phi, T_n(0, eta) phi>``."""
        etas = list(etas) if etas is not None else self.default_etas()
        ratios = [a / b for a, b in zip(etas[:-1], etas[1:])]
        if any(e <= 0 for e in etas) or not ratios or any(abs(q - ratios[0]) > 1e-12 * ratios[0] for q in ratios) \
                or ratios[0] <= 1:
            raise ValueError("eta schedule must be positive, geometric and decreasing")
        self._need(n)
        samples, largest = [], []
        for eta in etas:
            mat, parts = self.regularized_Tn(n, eta, terms=True)
            samples.append(self._expect(mat))
            big = max((abs(self._expect(v)) for _, _, v in parts), default=0.0)
            largest.append(big)
        table = richardson(samples, ratios[0], powers[: max(len(etas) - 2, 1)])
        final = table[-1]
        value = final[-1]
        error = abs(final[-1] - final[-2]) if len(final) > 1 else math.inf
        diffs = np.diff(samples)
        monotone = bool(np.all(diffs >= 0) or np.all(diffs <= 0))
        shrinking = bool(np.all(np.abs(diffs[1:]) <= np.abs(diffs[:-1]) * (1 + 1e-12) + 1e-15))
        flagged = not (monotone and shrinking) and n % 2 == 0 and any(samples)
        msg = "" if not flagged else "eta trace is not monotone; extrapolated value is unreliable"
        return EtaEstimate(value, error, etas, samples, table, flagged, msg, largest)

    # -- ground-state norms -----------------------------------------------

    def gs_graph_function(self, m: int, n: int, r: float, eta: float) -> GraphFunction:
        return gs_graph_function(self.model, m, n, r, eta)

    def gs_norm(self, m: int, eta: float = 0.0, route: str = "G") -> float:
        """``||psi_m(eta)||^2``; ``route="T"`` uses the regularised sum (``eta > 0``)."""
        if m < 0 or m > self.m_max:
            raise ValueError(f"m must be within 0..{self.m_max}, got {m}")
        if m == 0:
            return 1.0
        self.energy_coefficient(2 * m - 1)
        w = (m, m)
        if route == "G":
            return self._expect(self.G(w, 0.0, eta, parallel=True)[0])
        if route == "T":
            if not eta > 0:
                raise ValueError("the regularised route needs eta > 0")
            return self._expect(self.T_regularized(w, 0.0, eta, parallel=True)[0])
        raise ValueError(f"unknown route {route!r}")

    def norm_series(self, m_max: int, eta: float = 0.0) -> NormSeries:
        vals = [self.gs_norm(m, eta) for m in range(m_max + 1)]
        return NormSeries(eta, vals)


def gs_graph_function(model: AtomicModel, m: int, n: int, r: float, eta: float) -> GraphFunction:
    """``pi_{m,n}(r, eta)`` on ``[m, n] \\ {0}``: ``R(. + r, eta)`` edges, squared on ``{-1, 1}``."""
    if m == 0 or n == 0:
        raise ValueError("the carrier must not contain 0")
    if m > n:
        raise ValueError(f"empty carrier [{m}, {n}]")
    labels = mn_set(m, n)
    edges = [ResolventHandle(model, eta, 2 if (a, b) == (-1, 1) else 1, "full", r)
             for a, b in zip(labels[:-1], labels[1:])]
    return GraphFunction.from_internal(labels, edges, model.dimension)
