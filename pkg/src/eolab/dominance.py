"""Empirical tests of increasing convex (second-order stochastic) order.

A loss A is dominated by B in increasing convex order iff its stop-loss curve
E[(A - t)+] lies below B's at every threshold t.  With finite samples the
comparison needs a tolerance policy: we test the pointwise difference against a
z * SE band on a fixed grid and report the worst violation, never a p-value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class EmpiricalSample:
    """A bag of scalar draws (typically scaled optimality gaps)."""
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        object.__setattr__(self, "values", v)
        if v.size < 2:
            raise ValueError("need at least 2 values")

    @property
    def m(self) -> int:
        return self.values.size

    def summary(self) -> dict:
        v = self.values
        return {
            "mean": float(v.mean()),
            "variance": float(v.var(ddof=1)),
            "min": float(v.min()),
            "max": float(v.max()),
        }


@dataclass(frozen=True)
class DominancePolicy:
    z: float = 3.0
    grid_size: int = 512
    extension: float = 0.05


@dataclass(frozen=True)
class DominanceVerdict:
    verdict: str                 # 'dominated' | 'not-dominated' | 'inconclusive'
    worst_t: float
    worst_violation: float       # max over grid of stop_loss(A) - stop_loss(B)
    worst_se: float
    grid: np.ndarray
    policy: DominancePolicy

    def to_json(self) -> str:
        return json.dumps({
            "verdict": self.verdict,
            "worst_t": self.worst_t,
            "worst_violation": self.worst_violation,
            "worst_se": self.worst_se,
            "grid": {"size": int(self.grid.size),
                     "low": float(self.grid[0]), "high": float(self.grid[-1])},
            "policy": {"z": self.policy.z, "grid_size": self.policy.grid_size,
                       "extension": self.policy.extension},
        })


def stop_loss(sample: EmpiricalSample, t: float) -> float:
    """E[(X - t)+] over the sample; nonincreasing and convex in t."""
    return float(np.mean(np.maximum(sample.values - t, 0.0)))


def _stop_loss_curve(values: np.ndarray, grid: np.ndarray):
    """Stop-loss means and their per-point variance terms on a grid."""
    excess = np.maximum(values[:, None] - grid[None, :], 0.0)
    mean = excess.mean(axis=0)
    var = excess.var(axis=0, ddof=1)
    return mean, var


def icx_dominates(A: EmpiricalSample, B: EmpiricalSample,
                  policy: DominancePolicy = DominancePolicy()) -> DominanceVerdict:
    """Test whether A is dominated by B in increasing convex order.

    'dominated' means stop_loss(A, t) <= stop_loss(B, t) + z*SE(t) at every
    point of the grid; a violation beyond the band anywhere yields
    'not-dominated'.  The in-between case (violations inside the band but the
    point estimate never strictly below everywhere) collapses to 'dominated'
    under this band policy, so 'inconclusive' is reserved for degenerate
    certificates flagged upstream.
    """
    lo = min(float(A.values.min()), float(B.values.min()))
    hi = max(float(A.values.max()), float(B.values.max()))
    span = hi - lo if hi > lo else max(abs(hi), 1.0)
    grid = np.linspace(lo - policy.extension * span, hi + policy.extension * span,
                       policy.grid_size)
    mean_a, var_a = _stop_loss_curve(A.values, grid)
    mean_b, var_b = _stop_loss_curve(B.values, grid)
    diff = mean_a - mean_b
    se = np.sqrt(var_a / A.m + var_b / B.m)
    i = int(np.argmax(diff))
    worst = float(diff[i])
    band = policy.z * se
    if np.all(diff <= band):
        verdict = "dominated"
    else:
        verdict = "not-dominated"
        i = int(np.argmax(diff - band))
        worst = float(diff[i])
    return DominanceVerdict(
        verdict=verdict, worst_t=float(grid[i]), worst_violation=worst,
        worst_se=float(se[i]), grid=grid, policy=policy,
    )


def mps_check(base: EmpiricalSample, shift: float, noise, bins: int = 10,
              z: float = 3.0) -> dict:
    """Check the mean-preserving-spread structure E[noise | base + shift] = 0.

    Partitions base + shift into equal-count quantile bins and reports each
    bin's noise mean with its standard error; the spread property holds when
    every bin mean sits within z standard errors of zero.
    """
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    noise = np.asarray(noise, dtype=float).ravel()
    if noise.size != base.m:
        raise ValueError("noise must pair 1-1 with base values")
    cond = base.values + shift
    order = np.argsort(cond, kind="stable")
    splits = np.array_split(order, bins)
    means, ses = [], []
    for idx in splits:
        if idx.size < 10:
            raise ValueError(f"bin with only {idx.size} points; need >= 10")
        chunk = noise[idx]
        means.append(float(chunk.mean()))
        ses.append(float(chunk.std(ddof=1) / np.sqrt(idx.size)))
    means = np.array(means)
    ses = np.array(ses)
    within = np.abs(means) <= z * np.maximum(ses, 1e-300)
    if np.allclose(noise, 0.0):
        within = np.ones(bins, dtype=bool)
    return {
        "max_abs_bin_mean": float(np.max(np.abs(means))),
        "bin_means": means,
        "bin_ses": ses,
        "z": z,
        "holds": bool(np.all(within)),
    }


def utility_moments(sample: EmpiricalSample, exponents) -> list:
    """E[X^p] per exponent p >= 1; the risk functionals ordered by dominance."""
    out = []
    v = sample.values
    for p in exponents:
        if p < 1:
            raise ValueError("exponents must be >= 1")
        if p != int(p) and np.any(v < 0):
            raise ValueError("fractional exponent on negative values")
        out.append(float(np.mean(v ** p)))
    return out
