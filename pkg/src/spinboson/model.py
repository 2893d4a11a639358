"""Atomic system, radial couplings and the atomic resolvents.

Energies are measured in the units of ``h_at``.  The field couples through
``G(k) = sum_j f_j(|k|) B_j``, so every momentum integral that appears in the
expansions is a radial integral with weight ``4 pi s^2``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special


class ModelError(ValueError):
    """Raised for an inadmissible atomic model or coupling."""


class DomainError(ValueError):
    """Raised when a resolvent is requested where it is unbounded."""


def _as_matrix(a, name="matrix") -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=complex))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ModelError(f"{name} must be square, got shape {m.shape}")
    return m


def hermitian_defect(m: np.ndarray) -> float:
    return float(np.max(np.abs(m - m.conj().T))) if m.size else 0.0


@dataclass(frozen=True, eq=False)
class AtomicModel:
    """Finite atomic Hamiltonian with cached spectral data.

    Attributes set after construction: ``evals`` and ``evecs`` (ascending),
    ``e_at``, ``phi_at``, ``p_at`` and ``gap`` (``inf`` in dimension one).
    """

    h_at: np.ndarray
    gap_min: float = 1e-6
    evals: np.ndarray = field(init=False, repr=False)
    evecs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h = _as_matrix(self.h_at, "h_at")
        object.__setattr__(self, "h_at", h)
        w, u = np.linalg.eigh(0.5 * (h + h.conj().T))
        # fix the phase of each eigenvector so the largest entry is real positive
        for k in range(u.shape[1]):
            j = int(np.argmax(np.abs(u[:, k])))
            u[:, k] *= np.exp(-1j * np.angle(u[j, k]))
        object.__setattr__(self, "evals", w)
        object.__setattr__(self, "evecs", u)

    @property
    def dimension(self) -> int:
        return self.h_at.shape[0]

    @property
    def e_at(self) -> float:
        return float(self.evals[0])

    @property
    def phi_at(self) -> np.ndarray:
        return self.evecs[:, 0].copy()

    @property
    def p_at(self) -> np.ndarray:
        v = self.evecs[:, 0]
        return np.outer(v, v.conj())

    @property
    def gap(self) -> float:
        if self.dimension == 1:
            return math.inf
        return float(self.evals[1] - self.evals[0])

    def propagator(self, x, eta: float, part: str = "full", power: int = 1) -> np.ndarray:
        """Stack of ``R(x_i, eta)**power`` (or its ``perp``/``par`` part).

        ``x`` is an array of non-negative shifts; returns shape ``x.shape + (d, d)``.
        The ground-state component is dropped exactly where ``x == 0``.
        """
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or eta < 0:
            raise DomainError("propagator arguments must be non-negative")
        d = self.dimension
        denom = self.e_at - self.evals[None, :] - x.reshape(-1, 1) - eta
        coef = np.zeros_like(denom)
        excited = slice(1, d)
        if part in ("full", "perp"):
            coef[:, excited] = 1.0 / denom[:, excited] ** power
        if part in ("full", "par"):
            live = x.reshape(-1) > 0
            if part == "full" and eta == 0 and not np.all(live):
                raise DomainError("R(0, 0) is unbounded on the ground state")
            with np.errstate(divide="ignore"):
                coef[live, 0] = 1.0 / denom[live, 0] ** power
        elif part != "perp":
            raise ValueError(f"unknown resolvent part {part!r}")
        u = self.evecs
        out = np.einsum("ik,mk,jk->mij", u, coef, u.conj())
        return out.reshape(x.shape + (d, d))


@dataclass(frozen=True)
class PropagatorQuery:
    r: float
    eta: float

    def __post_init__(self):
        if self.r < 0 or self.eta < 0:
            raise DomainError(f"need r >= 0 and eta >= 0, got {self}")


def _query(q, eta=None) -> PropagatorQuery:
    if isinstance(q, PropagatorQuery):
        return q
    return PropagatorQuery(float(q), float(eta))


def resolvent(model: AtomicModel, q, eta: Optional[float] = None) -> np.ndarray:
    """``(1 - P_at [r = 0]) / (E_at - H_at - r - eta)``.

    Accepts a :class:`PropagatorQuery` or ``(r, eta)``.
    """
    q = _query(q, eta)
    if q.r == 0 and q.eta == 0:
        raise DomainError("R(0, 0) is unbounded on the ground state")
    return model.propagator(np.array(q.r), q.eta)


def resolvent_perp(model: AtomicModel, q, eta: Optional[float] = None) -> np.ndarray:
    q = _query(q, eta)
    return model.propagator(np.array(q.r), q.eta, part="perp")


def resolvent_par(model: AtomicModel, q, eta: Optional[float] = None) -> np.ndarray:
    q = _query(q, eta)
    if q.r == 0 and q.eta == 0:
        raise DomainError("the parallel resolvent is unbounded at (0, 0)")
    return model.propagator(np.array(q.r), q.eta, part="par")


# -- couplings ---------------------------------------------------------------

@dataclass(frozen=True)
class RadialProfile:
    """``c * s**alpha * exp(-s / lam)``."""

    c: float = 1.0
    alpha: float = 0.0
    lam: float = 1.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.c * np.power(s, self.alpha) * np.exp(-s / self.lam)

    def check(self) -> list[str]:
        errs = []
        if not np.isfinite(self.c):
            errs.append(f"profile constant c={self.c} is not finite")
        if not self.lam > 0:
            errs.append(f"profile scale lam={self.lam} must be positive")
        if not self.alpha > -0.5:
            errs.append(f"profile exponent alpha={self.alpha} must exceed -1/2 (infrared)")
        return errs


@dataclass(frozen=True, eq=False)
class RadialCoupling:
    """``G(s) = sum_j f_j(s) B_j`` for ``s <= uv_cutoff``, zero beyond."""

    terms: tuple
    uv_cutoff: Optional[float] = None

    def __post_init__(self):
        terms = tuple((prof, _as_matrix(B, "coupling matrix")) for prof, B in self.terms)
        if not terms:
            raise ModelError("coupling needs at least one term")
        shapes = {B.shape for _, B in terms}
        if len(shapes) != 1:
            raise ModelError(f"coupling matrices have mixed shapes {shapes}")
        if self.uv_cutoff is not None and not self.uv_cutoff > 0:
            raise ModelError("uv_cutoff must be positive")
        object.__setattr__(self, "terms", terms)

    @property
    def dimension(self) -> int:
        return self.terms[0][1].shape[0]

    @property
    def alpha_min(self) -> float:
        return min(p.alpha for p, _ in self.terms)

    def matrix(self, s) -> np.ndarray:
        """``G(s)`` stacked over ``s``; shape ``s.shape + (d, d)``."""
        s = np.asarray(s, dtype=float)
        out = sum(p(s)[..., None, None] * B for p, B in self.terms)
        if self.uv_cutoff is not None:
            out = np.where((s <= self.uv_cutoff)[..., None, None], out, 0.0)
        return out

    def adjoint(self, s) -> np.ndarray:
        """``G(s)^*``."""
        return np.conj(np.swapaxes(self.matrix(s), -1, -2))

    def norm2(self, s) -> np.ndarray:
        """Squared operator norm ``||G(s)||^2``."""
        g = self.matrix(s)
        return np.linalg.norm(g, ord=2, axis=(-2, -1)) ** 2

    def is_zero(self) -> bool:
        return all(p.c == 0 or not np.any(B) for p, B in self.terms)


@dataclass
class RadialIntegral:
    value: float
    finite: bool
    small_s_power: float
    trace: list = field(default_factory=list)


def radial_integral(
    coupling: RadialCoupling,
    weight_power: float,
    weight_tail=lambda s: 1.0,
    cuts: Sequence[float] = (1e-2, 1e-4, 1e-6, 1e-8),
) -> RadialIntegral:
    """``int_0^inf s**weight_power * tail(s) * ||G(s)||^2 ds``.

    Finiteness at ``s -> 0`` is decided by power counting from the smallest
    profile exponent; the value uses an algebraic-weight rule on ``[0, 1]``.
    The trace lists integrals over ``[eps, inf)`` for shrinking ``eps``; it
    grows without bound when the integral diverges.
    """
    if coupling.is_zero():
        return RadialIntegral(0.0, True, math.inf, [])
    a = weight_power + 2 * coupling.alpha_min
    top = coupling.uv_cutoff if coupling.uv_cutoff is not None else math.inf

    def full(s):
        return s ** weight_power * weight_tail(s) * float(coupling.norm2(s))

    def smooth(s):
        # integrand with the leading power s**a taken out
        return s ** (-a) * full(s) if s > 0 else smooth(1e-300)

    lo_end = min(1.0, top)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        bulk = integrate.quad(full, cuts[0], lo_end, limit=200)[0]
        if top > 1.0:
            bulk += integrate.quad(full, 1.0, top, limit=200)[0]
        trace = [(cuts[0], bulk)]
        # add one decade band at a time so the trace stays accurate near 0
        for hi, lo in zip(cuts[:-1], cuts[1:]):
            edges = np.geomspace(lo, hi, 4)
            bulk += sum(integrate.quad(full, u, v, limit=100)[0] for u, v in zip(edges[:-1], edges[1:]))
            trace.append((lo, bulk))
    if a <= -1:
        return RadialIntegral(math.inf, False, a, trace)
    head = integrate.quad(smooth, 0.0, lo_end, weight="alg", wvar=(a, 0.0), limit=200)[0]
    tail = integrate.quad(full, 1.0, top, limit=200)[0] if top > 1.0 else 0.0
    return RadialIntegral(head + tail, True, a, trace)


def infrared_integral(coupling: RadialCoupling) -> RadialIntegral:
    """``4 pi int s^2 ||G||^2 (1 + s^-2) ds``."""
    res = radial_integral(coupling, 0.0, lambda s: (1.0 + s * s))
    res.value *= 4 * math.pi
    res.trace = [(e, 4 * math.pi * v) for e, v in res.trace]
    return res


def coupling_constant_cp(coupling: RadialCoupling, p: int, trace: bool = False):
    """``C_p = (4 pi int s^2 (1/s + 1)^(p+1) ||G(s)||^2 ds)^(1/2)``.

    Returns ``inf`` when the integral diverges; with ``trace=True`` also the
    :class:`RadialIntegral` record holding the truncation trace.
    """
    if p < 0:
        raise ValueError("p must be non-negative")
    # s^2 (1 + s)^(p+1) / s^(p+1)
    res = radial_integral(coupling, 1.0 - p, lambda s: (1.0 + s) ** (p + 1))
    value = math.sqrt(4 * math.pi * res.value) if res.finite else math.inf
    return (value, res) if trace else value


def exp_profile_moment(profile: RadialProfile, power: float) -> float:
    """Closed form ``int_0^inf s**power |f(s)|^2 ds`` for the default family."""
    k = power + 2 * profile.alpha
    if k <= -1:
        return math.inf
    return profile.c ** 2 * special.gamma(k + 1) * (profile.lam / 2) ** (k + 1)


# -- validation --------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    message: str = ""


@dataclass
class AdmissibilityReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [
                {"name": c.name, "passed": c.passed, "value": _jsonable(c.value), "message": c.message}
                for c in self.checks
            ],
        }


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def validate_model(model: AtomicModel, coupling: Optional[RadialCoupling] = None,
                   herm_tol: float = 1e-12) -> AdmissibilityReport:
    """Pass/fail for hermiticity, simple isolated ground state and the infrared integral."""
    checks = []
    h = model.h_at
    scale = max(1.0, float(np.max(np.abs(h))))
    asym = hermitian_defect(h)
    checks.append(Check("hermitian", asym <= herm_tol * scale, asym,
                        "" if asym <= herm_tol * scale else f"h_at is not Hermitian: max asymmetry {asym:.3e}"))
    gap = model.gap
    simple = gap > model.gap_min
    msg = ""
    if not simple:
        msg = (f"ground state is degenerate or nearly so: eigenvalues {model.evals[0]:.12g} and "
               f"{model.evals[1]:.12g} (gap {gap:.3e} <= gap_min {model.gap_min:.1e})")
    checks.append(Check("simple_ground_state", simple, gap, msg))
    if coupling is not None:
        if coupling.dimension != model.dimension:
            checks.append(Check("coupling_dimension", False, coupling.dimension,
                                f"coupling matrices are {coupling.dimension}x{coupling.dimension}, atom has dimension {model.dimension}"))
        errs = [e for prof, _ in coupling.terms for e in prof.check()]
        checks.append(Check("profile_parameters", not errs, [(p.c, p.alpha, p.lam) for p, _ in coupling.terms], "; ".join(errs)))
        ir = infrared_integral(coupling)
        checks.append(Check("infrared_integral", ir.finite and math.isfinite(ir.value), ir.value,
                            "" if ir.finite else f"infrared integral diverges at small s (power {ir.small_s_power:.3g}); truncated values {ir.trace}"))
    return AdmissibilityReport(checks)


def require_valid(model: AtomicModel, coupling: Optional[RadialCoupling] = None) -> None:
    rep = validate_model(model, coupling)
    if not rep.ok:
        raise ModelError("; ".join(c.message for c in rep.failures()))


# -- presets -----------------------------------------------------------------

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]])
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


def scalar_exp(c: float = 1.0, alpha: float = 0.0, lam: float = 1.0):
    """One-level atom (``H_at = 0``) with ``f(s) = c s^alpha exp(-s/lam)``."""
    return AtomicModel(np.zeros((1, 1))), RadialCoupling(((RadialProfile(c, alpha, lam), np.eye(1)),))


def two_level_exp(c: float = 1.0, alpha: float = 0.0, lam: float = 1.0, bz: float = 0.0):
    """``H_at = diag(0, 1)`` coupled through ``sigma_x`` (plus ``bz * sigma_z``)."""
    B = SIGMA_X + bz * SIGMA_Z
    return AtomicModel(np.diag([0.0, 1.0])), RadialCoupling(((RadialProfile(c, alpha, lam), B),))


PRESETS = {"scalar-exp": scalar_exp, "two-level-exp": two_level_exp}
