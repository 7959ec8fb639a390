"""Phi-divergences, their convex conjugates, and smoothness identities.

A divergence between distributions Q and Q' with likelihood ratio L = dQ/dQ'
is E_{Q'}[phi(L)] for a convex phi with phi(1) = 0.  The conjugate
phi*(s) = sup_{t>=0} {s t - phi(t)} drives all the robust-optimization duals,
and near s = 0 satisfies phi*(0) = 0, phi*'(0) = 1, phi*''(0) = 1/phi''(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class DivergenceError(ValueError):
    """Raised when a candidate phi fails the required smoothness/convexity."""


def _as_array(s):
    return np.asarray(s, dtype=float)


@dataclass(frozen=True)
class PhiDivergence:
    """A phi-divergence with first/second derivatives and conjugate.

    The conjugate triple (conj, conj_prime, conj_double) may be closed form;
    when omitted it is computed numerically by maximizing s*t - phi(t) over
    t >= 0 (bracketed golden section plus Newton polish, |stationarity| <= 1e-12).
    """

    id: str
    phi: Callable[[np.ndarray], np.ndarray]
    phi_prime: Callable[[np.ndarray], np.ndarray]
    phi_double: Callable[[np.ndarray], np.ndarray]
    conj: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conj_prime: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conj_double: Optional[Callable[[np.ndarray], np.ndarray]] = None
    conj_domain_low: float = -np.inf

    def __post_init__(self):
        phi1 = float(self.phi(np.asarray(1.0)))
        if abs(phi1) > 1e-12:
            raise DivergenceError(f"phi(1) = {phi1:g}, must be 0")
        curv = float(self.phi_double(np.asarray(1.0)))
        if not curv > 1e-12:
            raise DivergenceError(f"phi''(1) = {curv:g}, must be > 0")
        # convexity spot check: phi' nondecreasing on a grid
        ts = np.linspace(1e-6, 8.0, 257)
        dp = self.phi_prime(ts)
        if np.any(np.diff(dp) < -1e-9):
            raise DivergenceError("phi' is decreasing somewhere on (0, 8]: phi not convex")

    # -- conjugate ---------------------------------------------------------

    def conjugate(self, s):
        """phi*(s) = sup_{t>=0} {s t - phi(t)}, vectorized."""
        if self.conj is not None:
            return self.conj(_as_array(s))
        return np.vectorize(lambda v: _numeric_conjugate(self, v)[0])(_as_array(s))

    def conjugate_prime(self, s):
        if self.conj_prime is not None:
            return self.conj_prime(_as_array(s))
        # envelope theorem: d phi*/ds = argmax t(s)
        return np.vectorize(lambda v: _numeric_conjugate(self, v)[1])(_as_array(s))

    def conjugate_double(self, s):
        if self.conj_double is not None:
            return self.conj_double(_as_array(s))
        h = 1e-6
        s = _as_array(s)
        return (self.conjugate_prime(s + h) - self.conjugate_prime(s - h)) / (2 * h)

    @property
    def curvature_at_zero(self) -> float:
        """phi*''(0) = 1/phi''(1); the constant entering every dual expansion."""
        return 1.0 / float(self.phi_double(np.asarray(1.0)))


def _numeric_conjugate(div: PhiDivergence, s: float) -> tuple[float, float]:
    """Maximize g(t) = s*t - phi(t) over t >= 0.

    Returns (max value, argmax).  g is concave; bracket the maximizer by
    expanding from t=1, run golden section, then Newton-polish the stationarity
    g'(t) = s - phi'(t) to |g'| <= 1e-12.
    """
    def g(t):
        return s * t - float(div.phi(np.asarray(t)))

    lo, hi = 0.0, 1.0
    while g(hi * 2) > g(hi) and hi < 1e12:
        hi *= 2
    invphi = (np.sqrt(5) - 1) / 2
    a, b = lo, hi * 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    for _ in range(200):
        if b - a < 1e-13 * max(1.0, abs(a)):
            break
        if g(c) > g(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    t = 0.5 * (a + b)
    for _ in range(60):
        r = s - float(div.phi_prime(np.asarray(t)))
        if abs(r) <= 1e-12:
            break
        curv = float(div.phi_double(np.asarray(t)))
        if curv <= 0:
            break
        step = r / curv
        t_new = t + step
        if t_new <= 0:
            t_new = t / 2
        t = t_new
    t = max(t, 0.0)
    return g(t), t


# -- built-in divergences ---------------------------------------------------

def kl_divergence() -> PhiDivergence:
    """Kullback-Leibler: phi(t) = t log t - t + 1, phi*(s) = exp(s) - 1."""
    def phi(t):
        t = _as_array(t)
        out = np.where(t > 0, t * np.log(np.where(t > 0, t, 1.0)) - t + 1.0, 1.0)
        return out

    return PhiDivergence(
        id="kl",
        phi=phi,
        phi_prime=lambda t: np.log(_as_array(t)),
        phi_double=lambda t: 1.0 / _as_array(t),
        conj=lambda s: np.expm1(_as_array(s)),
        conj_prime=lambda s: np.exp(_as_array(s)),
        conj_double=lambda s: np.exp(_as_array(s)),
    )


def chi2_divergence() -> PhiDivergence:
    """Chi-square: phi(t) = (t-1)^2.

    The conjugate is s + s^2/4 on s >= -2; below the branch point the
    maximizer sticks at t = 0, so phi*(s) = -phi(0) = -1 exactly.
    """
    def conj(s):
        s = _as_array(s)
        return np.where(s >= -2.0, s + s * s / 4.0, -1.0)

    def conj_prime(s):
        s = _as_array(s)
        return np.where(s >= -2.0, 1.0 + s / 2.0, 0.0)

    def conj_double(s):
        s = _as_array(s)
        return np.where(s >= -2.0, 0.5, 0.0)

    return PhiDivergence(
        id="chi2",
        phi=lambda t: (_as_array(t) - 1.0) ** 2,
        phi_prime=lambda t: 2.0 * (_as_array(t) - 1.0),
        phi_double=lambda t: 2.0 * np.ones_like(_as_array(t)),
        conj=conj,
        conj_prime=conj_prime,
        conj_double=conj_double,
        conj_domain_low=-2.0,
    )


_REGISTRY = {"kl": kl_divergence, "chi2": chi2_divergence}


def get_divergence(name: str) -> PhiDivergence:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise DivergenceError(f"unknown divergence id {name!r}; known: {sorted(_REGISTRY)}")


# -- operations --------------------------------------------------------------

def conjugate_eval(div: PhiDivergence, s: float) -> float:
    """Evaluate phi*(s)."""
    if not np.isfinite(s):
        raise ValueError("s must be finite")
    return float(div.conjugate(s))


def divergence_value(weights, div: PhiDivergence) -> float:
    """Divergence of the reweighted empirical measure from uniform.

    For weights w on n atoms the likelihood ratio is L_i = n w_i and the value
    is (1/n) sum phi(n w_i).  Zero iff the weights are uniform.
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
    n = w.size
    return float(np.mean(div.phi(n * w)))


@dataclass(frozen=True)
class ConjugateIdentityReport:
    divergence_id: str
    value_at_zero: float
    prime_residual: float
    double_residual: float

    @property
    def ok(self) -> bool:
        return (abs(self.value_at_zero) < 1e-8
                and self.prime_residual < 1e-8
                and self.double_residual < 1e-8)

    def residuals(self) -> dict:
        return {
            "abs_conj_at_zero": abs(self.value_at_zero),
            "prime_residual": self.prime_residual,
            "double_residual": self.double_residual,
        }


def verify_conjugate_identities(div: PhiDivergence, step: float = 1e-5) -> ConjugateIdentityReport:
    """Check phi*(0)=0, phi*'(0)=1, phi*''(0)=1/phi''(1) by central differences."""
    f0 = float(div.conjugate(0.0))
    fp = float(div.conjugate(step))
    fm = float(div.conjugate(-step))
    d1 = (fp - fm) / (2 * step)
    d2 = (fp - 2 * f0 + fm) / (step * step)
    return ConjugateIdentityReport(
        divergence_id=div.id,
        value_at_zero=f0,
        prime_residual=abs(d1 - 1.0),
        double_residual=abs(d2 - div.curvature_at_zero),
    )
