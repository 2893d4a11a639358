"""Rayleigh-Schroedinger coefficients for a finite Hermitian pencil ``H0 + lam V``.

The ground vector is normalised by ``<psi0, psi(lam)> = 1`` so ``psi_m`` lies in
the orthogonal complement of ``psi0`` for ``m >= 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DegenerateError(ValueError):
    """The unperturbed ground eigenvalue is not simple."""


@dataclass(frozen=True, eq=False)
class FiniteProblem:
    h0: np.ndarray
    v: np.ndarray
    gap_min: float = 1e-6
    herm_tol: float = 1e-12

    def __post_init__(self):
        h0 = np.asarray(self.h0, dtype=complex)
        v = np.asarray(self.v, dtype=complex)
        if h0.shape != v.shape or h0.ndim != 2 or h0.shape[0] != h0.shape[1]:
            raise ValueError(f"h0 and v must be square of equal shape, got {h0.shape}, {v.shape}")
        for name, m in (("h0", h0), ("v", v)):
            asym = float(np.max(np.abs(m - m.conj().T)))
            if asym > self.herm_tol * max(1.0, float(np.max(np.abs(m)))):
                raise ValueError(f"{name} is not Hermitian (max asymmetry {asym:.3e})")
        w, u = np.linalg.eigh(h0)
        if len(w) > 1 and w[1] - w[0] <= self.gap_min:
            raise DegenerateError(f"lowest eigenvalue of h0 is not simple: {w[0]:.12g}, {w[1]:.12g}")
        object.__setattr__(self, "h0", h0)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_u", u)

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    @property
    def e0(self) -> float:
        return float(self._w[0])

    @property
    def psi0(self) -> np.ndarray:
        return self._u[:, 0].copy()

    @property
    def gap(self) -> float:
        return float(self._w[1] - self._w[0]) if self.dim > 1 else math.inf

    @property
    def p0_bar(self) -> np.ndarray:
        return np.eye(self.dim) - np.outer(self._u[:, 0], self._u[:, 0].conj())

    def reduced_resolvent(self) -> np.ndarray:
        """``(H0 - E0)^-1`` on the range of ``1 - P0``, zero on ``psi0``."""
        u, w = self._u[:, 1:], self._w[1:]
        return (u / (w - self._w[0])) @ u.conj().T


class DiagonalProblem:
    """``H0`` diagonal with sparse ``V``; enough for :func:`rs_coefficients` at large dimension."""

    def __init__(self, h0_diag, v, gap_min: float = 1e-6):
        import scipy.sparse as sp

        d = np.asarray(h0_diag, dtype=float)
        order = np.argsort(d, kind="stable")
        if len(d) > 1 and d[order[1]] - d[order[0]] <= gap_min:
            raise DegenerateError(f"lowest eigenvalue of h0 is not simple: {d[order[0]]:.12g}, {d[order[1]]:.12g}")
        self.h0_diag, self.v = d, sp.csr_matrix(v)
        self.h0 = sp.diags(d).tocsr()
        self._i0 = int(order[0])

    @property
    def dim(self) -> int:
        return len(self.h0_diag)

    @property
    def e0(self) -> float:
        return float(self.h0_diag[self._i0])

    @property
    def psi0(self) -> np.ndarray:
        e = np.zeros(self.dim, dtype=complex)
        e[self._i0] = 1.0
        return e

    @property
    def gap(self) -> float:
        rest = np.delete(self.h0_diag, self._i0)
        return float(rest.min() - self.e0) if rest.size else math.inf

    def reduced_resolvent(self):
        import scipy.sparse as sp

        diff = self.h0_diag - self.e0
        inv = np.where(np.arange(self.dim) == self._i0, 0.0, 1.0 / np.where(diff == 0, 1.0, diff))
        return sp.diags(inv).tocsr()


@dataclass
class ExpansionResult:
    energies: list
    vectors: list
    method: str

    def residuals(self, problem: FiniteProblem) -> list:
        """``||H0 psi_m + V psi_{m-1} - sum_k E_k psi_{m-k}||`` for each ``m``."""
        E, psi = self.energies, self.vectors
        out = [float(np.linalg.norm(problem.h0 @ psi[0] - E[0] * psi[0]))]
        for m in range(1, len(psi)):
            lhs = problem.h0 @ psi[m] + problem.v @ psi[m - 1]
            rhs = sum(E[k] * psi[m - k] for k in range(m + 1))
            out.append(float(np.linalg.norm(lhs - rhs)))
        return out


def _real(z: complex, tol: float = 1e-12) -> float:
    if abs(z.imag) > tol * max(1.0, abs(z.real)):
        raise ValueError(f"energy coefficient has imaginary part {z.imag:.3e}")
    return float(z.real)


def rs_coefficients(problem: FiniteProblem, n: int) -> ExpansionResult:
    """Inductive formula: ``E_{m+1} = <psi0, V psi_m>`` and

    ``psi_m = (H0 - E0)^-1 (1 - P0) (sum_{k=1}^m E_k psi_{m-k} - V psi_{m-1})``.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    K0, V, psi0 = problem.reduced_resolvent(), problem.v, problem.psi0
    E = [problem.e0, _real(np.vdot(psi0, V @ psi0))]
    psi = [psi0]
    for m in range(1, n + 1):
        src = sum(E[k] * psi[m - k] for k in range(1, m + 1)) - V @ psi[m - 1]
        psi.append(K0 @ src)
        if m < n:
            E.append(_real(np.vdot(psi0, V @ psi[m])))
    return ExpansionResult(E[: n + 1], psi, "inductive")


def feshbach_coefficients(problem: FiniteProblem, n: int) -> ExpansionResult:
    """Resolvent recursion ``K_0 = (1 - P0)/(H0 - E0)``,

    ``K_m = sum_{j=1}^m K_{j-1} (E_{m+1-j} - [j = m] V) K_0`` and
    ``E_{m+1} = -<psi0, V K_{m-1} V psi0>``; vectors ``psi_m = -K_{m-1} V psi0``.
    """
    if n < 1:
        raise ValueError("order must be >= 1")
    V, psi0 = problem.v, problem.psi0
    eye = np.eye(problem.dim)
    K = [problem.reduced_resolvent()]
    E = [problem.e0, _real(np.vdot(psi0, V @ psi0))]
    Vpsi = V @ psi0

    def grow():
        m = len(K)
        K.append(sum(K[j - 1] @ (E[m + 1 - j] * eye - (V if j == m else 0)) @ K[0]
                     for j in range(1, m + 1)))

    for m in range(1, n):
        while len(K) < m:
            grow()
        E.append(_real(-np.vdot(Vpsi, K[m - 1] @ Vpsi)))
    while len(K) < n:
        grow()
    psi = [psi0] + [-K[m - 1] @ Vpsi for m in range(1, n + 1)]
    return ExpansionResult(E[: n + 1], psi, "feshbach")


@dataclass
class ResidualTable:
    """Rows ``(lam, E(lam), partial sums, scaled remainders)`` and fitted slopes."""

    lam: np.ndarray
    exact: np.ndarray
    partial: np.ndarray      # [row, m] = sum_{k<=m} E_k lam^k
    remainder: np.ndarray    # [row, m] = E(lam) - partial
    scaled: np.ndarray       # [row, m] = remainder / lam^m
    flags: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def rows(self):
        for i, lam in enumerate(self.lam):
            yield lam, self.exact[i], self.partial[i], self.scaled[i]


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log|y|`` against ``log x`` over rows with ``x, y != 0``."""
    x, y = np.asarray(x, float), np.abs(np.asarray(y, float))
    ok = (x > 0) & (y > 0) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def lowest_eigenpair(h: np.ndarray):
    w, u = np.linalg.eigh(h)
    return float(w[0]), u[:, 0]


def asymptotic_residuals(problem: FiniteProblem, energies: Sequence[float], n: int,
                         lam_grid: Sequence[float], overlap_min: float = 0.1) -> ResidualTable:
    """Compare the partial sums with the exact lowest eigenvalue on ``lam_grid``.

    Rows whose normalised ground vector has ``|<psi0, psi(lam)>| < overlap_min``
    or whose eigensolve fails are flagged and left out of the slope fits.
    """
    lam = np.asarray(lam_grid, dtype=float)
    if np.any(lam < 0) or np.any(np.diff(lam) >= 0):
        raise ValueError("lambda grid must be non-negative and strictly decreasing")
    E = np.asarray(energies[: n + 1], dtype=float)
    rows = len(lam)
    exact = np.full(rows, np.nan)
    flags = []
    psi0 = problem.psi0
    for i, L in enumerate(lam):
        try:
            e, vec = lowest_eigenpair(problem.h0 + L * problem.v)
        except np.linalg.LinAlgError as err:  # pragma: no cover
            flags.append((float(L), f"eigensolver failed: {err}"))
            continue
        exact[i] = e
        ov = abs(np.vdot(psi0, vec))
        if ov < overlap_min:
            flags.append((float(L), f"ground-state overlap {ov:.3g} below {overlap_min}"))
    powers = lam[:, None] ** np.arange(n + 1)[None, :]
    partial = np.cumsum(E[None, :] * powers, axis=1)
    remainder = exact[:, None] - partial
    remainder[lam == 0] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(lam[:, None] > 0, remainder / powers, 0.0)
    bad = {L for L, _ in flags}
    keep = np.array([L > 0 and L not in bad for L in lam])
    slopes = {m: fit_loglog_slope(lam[keep], remainder[keep, m]) for m in range(n + 1)}
    return ResidualTable(lam, exact, partial, remainder, scaled, flags, slopes)


# -- oracles and ensembles ---------------------------------------------------

def fitted_coefficients(problem: FiniteProblem, order: int, radius: Optional[float] = None,
                        degree: int = 24) -> np.ndarray:
    """Taylor coefficients of the exact lowest eigenvalue from Chebyshev interpolation.

    ``E(lam)`` is sampled at Chebyshev points of ``[-radius, radius]`` (default a
    tenth of ``gap / ||V||``) and the interpolant is converted to monomials.
    """
    if radius is None:
        radius = 0.1 * min(1.0, problem.gap) / max(np.linalg.norm(problem.v, 2), 1e-300)
    k = np.arange(degree + 1)
    t = np.cos(np.pi * (k + 0.5) / (degree + 1))
    vals = np.array([lowest_eigenpair(problem.h0 + radius * x * problem.v)[0] for x in t])
    cheb = np.polynomial.chebyshev.Chebyshev.fit(t, vals, degree, domain=[-1, 1])
    mono = cheb.convert(kind=np.polynomial.Polynomial).coef
    mono = np.pad(mono, (0, max(0, order + 1 - len(mono))))
    return mono[: order + 1] / radius ** np.arange(order + 1)


def random_hermitian(rng: np.random.Generator, dim: int) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (a + a.conj().T) / 2


def random_problem(dim: int, seed: int, spread: float = 4.0, gap: float = 1.0) -> FiniteProblem:
    """``h0 = U diag(0, e_1, ...) U^*`` with ``e_i`` in ``[gap, gap + spread]`` and ``||V|| = 1``."""
    rng = np.random.default_rng(seed)
    levels = np.concatenate([[0.0], gap + spread * rng.random(dim - 1)])
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    h0 = (q * levels) @ q.conj().T
    h0 = (h0 + h0.conj().T) / 2
    v = random_hermitian(rng, dim)
    v /= np.linalg.norm(v, 2)
    return FiniteProblem(h0, v)


def two_level_problem() -> FiniteProblem:
    return FiniteProblem(np.diag([0.0, 1.0]), np.array([[0.0, 1.0], [1.0, 0.0]]))


def two_level_exact(lam):
    """Lowest eigenvalue ``(1 - sqrt(1 + 4 lam^2)) / 2`` of ``diag(0,1) + lam sigma_x``."""
    lam = np.asarray(lam, dtype=float)
    return (1 - np.sqrt(1 + 4 * lam * lam)) / 2
