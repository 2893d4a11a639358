"""Discretised, boson-truncated spin-boson Hamiltonian for exact checks.

Modes sit at the radial quadrature nodes ``s_i`` with ``omega_i = s_i`` and
``g_i = sqrt(4 pi w_i) s_i G(s_i)``, so ``sum_i g_i^* X g_i`` is the same rule
the graph engine uses for one contraction.  The Fock space keeps occupations
with ``sum n_i <= N_max``.  Wick's theorem holds exactly for discrete modes, so
with ``N_max >= n / 2`` the coefficients of this model equal the graph sums on
the same nodes.
"""
from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .matrix_pt import DiagonalProblem, ResidualTable, fit_loglog_slope, rs_coefficients
from .model import AtomicModel, RadialCoupling
from .quadrature import _nodes
from .renorm import EnergySeries

DENSE_LIMIT = 2000
DEFAULT_MAX_NNZ = 200_000


class DimensionError(ValueError):
    """The truncated Hilbert space exceeds the configured size."""


class EigenError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])


def occupation_basis(modes: int, n_max: int) -> list:
    """Occupation tuples with total at most ``n_max``, ordered by total then lexicographically."""
    out = []
    for total in range(n_max + 1):
        for combo in itertools.combinations_with_replacement(range(modes), total):
            occ = [0] * modes
            for i in combo:
                occ[i] += 1
            out.append(tuple(occ))
    # combinations_with_replacement yields reverse-lex occupation order within a total
    return sorted(out, key=lambda o: (sum(o), tuple(-x for x in o)))


@dataclass(eq=False)
class DiscretizedModel:
    atomic: AtomicModel
    omegas: np.ndarray
    couplings: np.ndarray       # (K, d, d)
    weights: np.ndarray         # raw quadrature weights
    n_max: int = 3
    basis: list = field(init=False, repr=False)

    def __post_init__(self):
        self.omegas = np.asarray(self.omegas, dtype=float)
        self.couplings = np.asarray(self.couplings, dtype=complex)
        if np.any(self.omegas <= 0):
            raise ValueError("all mode frequencies must be positive")
        if self.n_max < 0:
            raise ValueError("N_max must be non-negative")
        self.basis = occupation_basis(len(self.omegas), self.n_max)

    @property
    def modes(self) -> int:
        return len(self.omegas)

    @property
    def boson_dim(self) -> int:
        return len(self.basis)

    @property
    def dimension(self) -> int:
        return self.atomic.dimension * self.boson_dim

    def coupling_sum(self, power: int = 1) -> float:
        """``sum_i ||g_i||^2 / omega_i^power``."""
        n2 = np.linalg.norm(self.couplings, ord=2, axis=(-2, -1)) ** 2
        return float(np.sum(n2 / self.omegas ** power))

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.atomic.h_at, self.omegas, self.couplings):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update(str(self.n_max).encode())
        return h.hexdigest()[:16]

    # -- operators -------------------------------------------------------

    def creation(self, i: int) -> sp.csr_matrix:
        """``a_i^*`` on the truncated boson space (states at the cutoff map to 0)."""
        index = {o: k for k, o in enumerate(self.basis)}
        rows, cols, vals = [], [], []
        for k, o in enumerate(self.basis):
            up = list(o)
            up[i] += 1
            j = index.get(tuple(up))
            if j is not None:
                rows.append(j)
                cols.append(k)
                vals.append(math.sqrt(o[i] + 1))
        n = self.boson_dim
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def number_diag(self) -> np.ndarray:
        return np.array([sum(o) for o in self.basis], dtype=float)

    def field_energy_diag(self) -> np.ndarray:
        return np.array([float(np.dot(o, self.omegas)) for o in self.basis])

    def estimated_nnz(self) -> int:
        d, nb = self.atomic.dimension, self.boson_dim
        links = sum(1 for o in self.basis if sum(o) < self.n_max) * self.modes
        return d * nb + 2 * d * d * links

    def interaction(self, eigenbasis: bool = False) -> sp.csr_matrix:
        """``sum_i g_i (x) a_i^* + g_i^* (x) a_i``, optionally in the atomic eigenbasis."""
        u = self.atomic.evecs
        V = None
        for i in range(self.modes):
            g = self.couplings[i]
            if eigenbasis:
                g = u.conj().T @ g @ u
            ad = self.creation(i)
            term = sp.kron(sp.csr_matrix(g), ad) + sp.kron(sp.csr_matrix(g.conj().T), ad.T)
            V = term if V is None else V + term
        if V is None:
            return sp.csr_matrix((self.dimension, self.dimension), dtype=complex)
        return V.tocsr()

    def free_hamiltonian(self) -> sp.csr_matrix:
        nb = self.boson_dim
        return (sp.kron(sp.csr_matrix(self.atomic.h_at), sp.identity(nb))
                + sp.kron(sp.identity(self.atomic.dimension), sp.diags(self.field_energy_diag()))).tocsr()


def discretize(model: AtomicModel, coupling: RadialCoupling, modes: int = 4, n_max: int = 3,
               scale: float = 1.0, truncation: Optional[float] = None) -> DiscretizedModel:
    """Modes at the Gauss-Legendre half-line nodes used by the graph engine."""
    if modes < 1:
        raise ValueError("need at least one mode")
    if coupling.dimension != model.dimension:
        raise ValueError("coupling and atom dimensions differ")
    if truncation is None:
        truncation = coupling.uv_cutoff
    s, w = _nodes(int(modes), float(scale), truncation)
    g = np.sqrt(4 * math.pi * w)[:, None, None] * s[:, None, None] * coupling.matrix(s)
    return DiscretizedModel(model, s.copy(), g, w.copy(), n_max)


def build_hamiltonian(dm: DiscretizedModel, lam: float, max_nnz: int = DEFAULT_MAX_NNZ) -> sp.csr_matrix:
    """``H_at (x) 1 + sum omega_i n_i + lam V`` in the truncated occupation basis."""
    nnz = dm.estimated_nnz()
    if nnz > max_nnz:
        raise DimensionError(f"truncated Hamiltonian has dimension {dm.dimension} and about {nnz} "
                             f"nonzeros, above the limit {max_nnz}")
    H = dm.free_hamiltonian() + lam * dm.interaction()
    H = (H + H.conj().T) / 2  # exact Hermitian symmetrisation (both halves are equal)
    return H.tocsr()


def ground_state(H, tol: float = 1e-10):
    """Lowest eigenpair; dense below :data:`DENSE_LIMIT`, otherwise Lanczos."""
    n = H.shape[0]
    hnorm = spla.norm(H, 1) if sp.issparse(H) else np.linalg.norm(H, 1)
    hnorm = max(float(hnorm), 1e-300)
    trace = []
    if n < DENSE_LIMIT:
        dense = H.toarray() if sp.issparse(H) else np.asarray(H)
        w, u = np.linalg.eigh(dense)
        e, v = float(w[0]), u[:, 0]
    else:
        v0 = np.ones(n) / math.sqrt(n)
        e = v = None
        for ncv in (20, 40, 80):
            try:
                w, u = spla.eigsh(H, k=1, which="SA", tol=tol * 1e-2, ncv=min(ncv, n - 1), v0=v0, maxiter=20 * n)
            except spla.ArpackNoConvergence as err:
                trace.append(f"ncv={ncv}: no convergence ({err})")
                continue
            e, v = float(w[0]), u[:, 0]
            res = float(np.linalg.norm(H @ v - e * v))
            trace.append(f"ncv={ncv}: E={e:.15g} residual={res:.3e}")
            if res < tol * hnorm:
                break
        if e is None:
            raise EigenError("Lanczos did not converge", trace)
    res = float(np.linalg.norm(H @ v - e * v))
    if res >= tol * hnorm:
        raise EigenError(f"eigen-residual {res:.3e} exceeds {tol:g} * ||H||", trace)
    return e, v, res


def ground_energy(dm: DiscretizedModel, lam: float) -> float:
    return ground_state(build_hamiltonian(dm, lam))[0]


def finite_problem(dm: DiscretizedModel) -> DiagonalProblem:
    """``H0`` (diagonal in the atomic eigenbasis) and ``V`` for the matrix expansions."""
    nb = dm.boson_dim
    h0 = (np.repeat(dm.atomic.evals, nb) + np.tile(dm.field_energy_diag(), dm.atomic.dimension))
    return DiagonalProblem(h0, dm.interaction(eigenbasis=True))


def discrete_rs(dm: DiscretizedModel, n: int) -> EnergySeries:
    """``E_k^disc`` for ``k <= n`` from the inductive expansion of the truncated model."""
    res = rs_coefficients(finite_problem(dm), n)
    diag = [{"n": k, "E_n": e, "method": "discrete-rs", "modes": dm.modes, "n_max": dm.n_max,
             "model_hash": dm.digest()} for k, e in enumerate(res.energies)]
    return EnergySeries(list(res.energies), diag)


@dataclass
class BoundRow:
    lam: float
    energy: float
    upper: float           # E_at
    lower: float           # E_at - lam^2 sum ||g||^2 / omega
    number: float          # <N> in the normalised ground vector
    number_bound: float    # lam^2 sum ||g||^2 / omega^2
    residual: float
    ok_upper: bool
    ok_lower: bool
    ok_number: bool


@dataclass
class OracleReport:
    lam: np.ndarray
    exact: np.ndarray
    coefficients: list
    table: ResidualTable
    slopes: dict
    order: int
    expected_slope: int
    bounds: list
    rate_note: str = "empirical rate"

    @property
    def slope(self) -> float:
        return self.slopes[self.order]

    def bounds_ok(self) -> bool:
        return all(b.ok_upper and b.ok_lower for b in self.bounds)

    def csv_rows(self):
        """Rows ``(lam, E, bound_low, partial_sum_n, remainder, slope_window)``."""
        for i, lam in enumerate(self.lam):
            yield (float(lam), float(self.exact[i]), self.bounds[i].lower,
                   float(self.table.partial[i, self.order]), float(self.table.remainder[i, self.order]),
                   self.slope)


def bound_rows(dm: DiscretizedModel, lam_grid: Sequence[float], tol: float = 1e-10) -> list:
    e_at = dm.atomic.e_at
    c1, c2 = dm.coupling_sum(1), dm.coupling_sum(2)
    N = np.tile(dm.number_diag(), dm.atomic.dimension)
    rows = []
    for lam in lam_grid:
        H = build_hamiltonian(dm, lam)
        e, v, res = ground_state(H)
        slack = tol * max(1.0, float(spla.norm(H, 1)))
        num = float(np.real(np.vdot(v, N * v)) / np.real(np.vdot(v, v)))
        low = e_at - lam * lam * c1
        nb = lam * lam * c2
        rows.append(BoundRow(float(lam), e, e_at, low, num, nb, res,
                             e <= e_at + slack, e >= low - slack, num <= nb * (1 + 1e-9) + 1e-14))
    return rows


def asymptotic_report(dm: DiscretizedModel, energies, lam_grid: Sequence[float], n: int) -> OracleReport:
    """Remainders of the order-``n`` partial sum against exact diagonalisation.

    ``energies`` is an :class:`EnergySeries` (or a list) from either the
    continuum engine or :func:`discrete_rs`.  The fitted slope is compared with
    ``n + 2``, the next non-vanishing order by parity; this rate is empirical.
    """
    coeffs = list(getattr(energies, "coefficients", energies))
    if len(coeffs) < n + 1:
        raise ValueError(f"need coefficients up to order {n}")
    lam = np.asarray(lam_grid, dtype=float)
    order = np.argsort(-lam, kind="stable")
    lam_sorted = lam[order]
    bounds = bound_rows(dm, lam_sorted)
    exact = np.array([b.energy for b in bounds])
    partial = np.cumsum(np.asarray(coeffs[: n + 1])[None, :] * lam_sorted[:, None] ** np.arange(n + 1), axis=1)
    remainder = exact[:, None] - partial
    remainder[lam_sorted == 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(lam_sorted[:, None] > 0, remainder / lam_sorted[:, None] ** np.arange(n + 1), 0.0)
    keep = lam_sorted > 0
    slopes = {m: fit_loglog_slope(lam_sorted[keep], remainder[keep, m]) for m in range(n + 1)}
    table = ResidualTable(lam_sorted, exact, partial, remainder, scaled, [], slopes)
    return OracleReport(lam_sorted, exact, coeffs[: n + 1], table, slopes, n, n + 2, bounds)


def default_lambda_grid(lo: float = 1e-3, hi: float = 1e-1, points: int = 9) -> np.ndarray:
    return np.geomspace(hi, lo, points)


__all__ = ["DiscretizedModel", "DimensionError", "EigenError", "OracleReport", "BoundRow",
           "discretize", "build_hamiltonian", "ground_state", "ground_energy", "finite_problem",
           "discrete_rs", "asymptotic_report", "bound_rows", "occupation_basis", "default_lambda_grid"]
