"""Limit laws of scaled optimality gaps and Monte Carlo rate certification.

The scaled gap n * G(x_hat_n^lambda) of a smooth data-driven procedure has a
trichotomy of weak limits indexed by a = lim sqrt(n) * lambda_n:

  case 1 (a = 0):        (1/2) Y' H Y, the pure empirical-optimization limit;
  case 2 (|a| = inf):    blow-up; lambda_n^{-2} G converges to (1/2) K' H K;
  case 3 (0 < |a| < inf): (1/2) Y' H Y + (a^2/2) K' H K + a K' H Y,

with Y ~ N(0, Cov(IF)), H the (Lagrangian) Hessian at the optimum, and K the
procedure's first-order bias direction.  This module samples those laws,
classifies rules, and fits the convergence rates that certify the expansions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .dominance import EmpiricalSample
from .model import DEGENERACY_TOL, Dataset, ProblemSpec, sample_dataset, true_gap
from .solvers import ProcedureSpec, SolverError, solve
from .divergence import get_divergence


def mix_seed(master_seed: int, index: int) -> int:
    """Derive a per-replication seed via a 64-bit avalanche mix (SplitMix finalizer).

    A fixed pure function of (master seed, index), so replication streams are
    independent of execution order and worker count.
    """
    z = (master_seed + (index + 1) * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


@dataclass(frozen=True)
class LimitLawParams:
    H: np.ndarray
    sigma: np.ndarray
    K: np.ndarray
    a: float  # extended real; use math.inf / -math.inf for blow-up

    def __post_init__(self):
        for name in ("H", "sigma"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(M)) < -1e-10:
                raise ValueError(f"{name} must be positive semidefinite")

    @property
    def khk(self) -> float:
        return float(self.K @ self.H @ self.K)

    @property
    def degenerate(self) -> bool:
        return self.khk < DEGENERACY_TOL


def trichotomy_case(a: float) -> int:
    """Classify the limit regime of sqrt(n) * lambda_n -> a."""
    if a == 0:
        return 1
    if math.isinf(a):
        return 2
    return 3


@dataclass(frozen=True)
class LimitLawDraw:
    sample: EmpiricalSample
    base: np.ndarray      # (1/2) Y' H Y per draw
    shift: float          # (a^2/2) K' H K
    noise: np.ndarray     # a K' H Y per draw


def sample_limit_law(params: LimitLawParams, m: int, seed: int) -> LimitLawDraw:
    """Draw m realizations of the trichotomy limit with its paired decomposition."""
    case = trichotomy_case(params.a)
    if case == 2:
        c = 0.5 * params.khk
        values = np.full(m, c)
        return LimitLawDraw(
            sample=EmpiricalSample(values, label="limit-case2"),
            base=np.zeros(m), shift=c, noise=np.zeros(m),
        )
    rng = np.random.default_rng(seed)
    vals, vecs = np.linalg.eigh(params.sigma)
    root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    y = rng.standard_normal((m, params.K.size)) @ root.T
    base = 0.5 * np.einsum("ij,jk,ik->i", y, params.H, y)
    a = params.a
    shift = 0.5 * a * a * params.khk
    noise = a * (y @ (params.H @ params.K))
    values = base + shift + noise
    return LimitLawDraw(
        sample=EmpiricalSample(values, label=f"limit-a={a:g}"),
        base=base, shift=shift, noise=noise,
    )


# -- Monte Carlo over datasets ---------------------------------------------------

@dataclass(frozen=True)
class Replication:
    rep: int
    seed: int
    gap: float
    scaled_gap: float
    converged: bool
    iters: int
    error: Optional[str] = None
    x: Optional[np.ndarray] = None


def run_replication(problem: ProblemSpec, spec: ProcedureSpec, n: int,
                    master_seed: int, rep: int, keep_x: bool = False) -> Replication:
    seed = mix_seed(master_seed, rep)
    try:
        dataset = sample_dataset(problem, n, seed)
        sol = solve(problem, dataset, spec)
        gap = true_gap(problem, sol.x)
        return Replication(rep=rep, seed=seed, gap=gap, scaled_gap=n * gap,
                           converged=sol.converged, iters=sol.iterations,
                           x=sol.x if keep_x else None)
    except (SolverError, np.linalg.LinAlgError) as exc:
        return Replication(rep=rep, seed=seed, gap=math.nan, scaled_gap=math.nan,
                           converged=False, iters=0, error=str(exc))


def replicate(problem: ProblemSpec, spec: ProcedureSpec, n: int,
              replications: int, seed: int, jobs: int = 1,
              keep_x: bool = False) -> list:
    """Run independent replications; results ordered by index regardless of jobs."""
    if jobs <= 1:
        return [run_replication(problem, spec, n, seed, r, keep_x)
                for r in range(replications)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_replication, problem, spec, n, seed, r, keep_x)
                   for r in range(replications)]
        return [f.result() for f in futures]


def gap_distribution(problem: ProblemSpec, spec: ProcedureSpec, n: int,
                     replications: int, seed: int, jobs: int = 1):
    """Sample of n * G over replications; failed replications excluded, counted.

    Returns (EmpiricalSample, failure count).
    """
    rows = replicate(problem, spec, n, replications, seed, jobs)
    good = np.array([r.scaled_gap for r in rows if r.error is None])
    failures = sum(1 for r in rows if r.error is not None)
    label = f"{problem.id}/{spec.kind}/n={n}"
    return EmpiricalSample(good, label=label), failures


def ks_distance(A: EmpiricalSample, B: EmpiricalSample) -> float:
    """Two-sample Kolmogorov-Smirnov sup-distance between empirical CDFs."""
    return float(stats.ks_2samp(A.values, B.values, method="asymp").statistic)


# -- expansion diagnostics --------------------------------------------------------

def _effective_lambda(spec: ProcedureSpec, lam: float) -> float:
    # the divergence-ball radius enters the solution shift through its root
    return math.sqrt(lam) if spec.kind == "dro-divergence" else lam


def _bias_vector(problem: ProblemSpec, spec: ProcedureSpec) -> np.ndarray:
    div = get_divergence(spec.divergence) if spec.divergence else None
    return problem.certificate.bias_vector(spec.kind, div)


def expansion_residual_rate(problem: ProblemSpec, kind: str, n_grid, lambda_rule,
                            replications: int, seed: int, divergence=None,
                            penalty: str = "ridge") -> dict:
    """Fit the decay rate of the first-order expansion residual.

    For each n the residual is x_hat - x* - <IF, P_hat - P> - lam_eff * K,
    averaged in norm over replications; the returned slope is the least-squares
    fit of log mean residual against log(1/sqrt(n) + lam_eff).  A slope well
    above 1 certifies the residual is negligible at the first-order scale.
    """
    n_grid = list(n_grid)
    if len(n_grid) < 3:
        raise ValueError("need at least 3 grid points to fit a rate")
    cert = problem.certificate
    rows = []
    for n in n_grid:
        lam = float(lambda_rule(n))
        spec = ProcedureSpec(kind=kind, lam=lam, penalty=penalty, divergence=divergence)
        eff = _effective_lambda(spec, lam)
        K = _bias_vector(problem, spec)
        norms = []
        for r in range(replications):
            s = mix_seed(seed + n, r)
            dataset = sample_dataset(problem, n, s)
            sol = solve(problem, dataset, spec)
            if_mean = cert.influence(dataset.values).mean(axis=0)
            resid = sol.x - cert.x_star - if_mean - eff * K
            norms.append(float(np.linalg.norm(resid)))
        norms = np.array(norms)
        rows.append({
            "n": n, "lambda": lam, "scale": 1.0 / math.sqrt(n) + eff,
            "mean_residual": float(norms.mean()),
            "se": float(norms.std(ddof=1) / math.sqrt(len(norms))),
        })
    xs = np.log([r["scale"] for r in rows])
    ys = np.log([max(r["mean_residual"], 1e-300) for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0])
    return {"slope": slope, "table": rows}


def expected_gap_bias(problem: ProblemSpec, kind: str, lam: float, n: int,
                      replications: int, seed: int, divergence=None,
                      penalty: str = "ridge") -> dict:
    """Paired estimate of E[G^lambda] - E[G^EO] against (1/2) lam_eff^2 K'HK."""
    spec = ProcedureSpec(kind=kind, lam=lam, penalty=penalty, divergence=divergence)
    div = get_divergence(divergence) if divergence else None
    if lam > 0 and problem.certificate.is_degenerate(kind, div):
        raise ValueError("bias direction is degenerate (K'HK ~ 0); comparison inconclusive")
    eff = _effective_lambda(spec, lam)
    K = _bias_vector(problem, spec)
    predicted = 0.5 * eff * eff * float(K @ problem.certificate.hessian @ K)
    eo = ProcedureSpec(kind="eo")
    diffs = []
    for r in range(replications):
        s = mix_seed(seed, r)
        dataset = sample_dataset(problem, n, s)
        g_lam = true_gap(problem, solve(problem, dataset, spec).x)
        g_eo = true_gap(problem, solve(problem, dataset, eo).x)
        diffs.append(g_lam - g_eo)
    diffs = np.array(diffs)
    return {
        "observed": float(diffs.mean()),
        "se": float(diffs.std(ddof=1) / math.sqrt(diffs.size)),
        "predicted": predicted,
    }


def cramer_rao_trace(problem: ProblemSpec, method: str = "closed",
                     draws: int = 10 ** 6, seed: int = 0) -> float:
    """tr(H^{-1} Cov(grad h(x*, xi))); equals d for a maximum-likelihood loss."""
    cert = problem.certificate
    Hinv = np.linalg.inv(cert.hessian)
    if method == "closed":
        return float(np.trace(Hinv @ cert.grad_cov))
    if method == "mc":
        xi = problem.sampler(draws, seed)
        g = problem.loss_grad(cert.x_star, xi)
        cov = np.cov(g, rowvar=False).reshape(problem.dim, problem.dim)
        return float(np.trace(Hinv @ cov))
    raise ValueError(f"unknown method {method!r}")


def ldro_bias_variance_check(problem: ProblemSpec, dataset: Dataset, div,
                             lam_grid) -> dict:
    """Observed vs predicted first-order effect of the penalized robust procedure.

    On a fixed dataset, the solution shift away from EO changes the empirical
    mean loss by ~ (c2/2) lam^2 and the empirical loss variance by ~ c1 lam,
    with c2 = phi*''(0)^2 Cov' H^{-1} Cov and c1 = -2 phi*''(0) Cov' H^{-1} Cov
    built from the empirical moments at the EO solution.
    """
    eo = solve(problem, dataset, ProcedureSpec(kind="eo"))
    xi = dataset.values
    h0 = problem.loss(eo.x, xi)
    g0 = problem.loss_grad(eo.x, xi)
    H = problem.loss_hess(eo.x, xi).mean(axis=0)
    cov = ((h0 - h0.mean())[:, None] * (g0 - g0.mean(axis=0))).mean(axis=0)
    quad = float(cov @ np.linalg.solve(H, cov))
    curv = div.curvature_at_zero
    predicted_mean_coeff = 0.5 * curv * curv * quad
    predicted_var_coeff = -2.0 * curv * quad
    rows = []
    for lam in lam_grid:
        sol = solve(problem, dataset,
                    ProcedureSpec(kind="dro-lagrangian", lam=lam, divergence=div.id))
        h1 = problem.loss(sol.x, xi)
        rows.append({
            "lambda": float(lam),
            "mean_change": float(h1.mean() - h0.mean()),
            "var_change": float(h1.var() - h0.var()),
        })
    lams = np.array([r["lambda"] for r in rows])
    mean_fit = float(np.sum(lams ** 2 * [r["mean_change"] for r in rows])
                     / np.sum(lams ** 4)) if np.any(lams) else 0.0
    var_fit = float(np.sum(lams * [r["var_change"] for r in rows])
                    / np.sum(lams ** 2)) if np.any(lams) else 0.0
    return {
        "table": rows,
        "fitted_mean_coeff": mean_fit,
        "fitted_var_coeff": var_fit,
        "predicted_mean_coeff": predicted_mean_coeff,
        "predicted_var_coeff": predicted_var_coeff,
    }


def limit_params_for(problem: ProblemSpec, kind: str, a: float,
                     divergence=None) -> LimitLawParams:
    """Assemble trichotomy parameters from a problem certificate."""
    div = get_divergence(divergence) if divergence else None
    cert = problem.certificate
    if kind in ("eo", "constrained-eo"):
        K = np.zeros(problem.dim)
    else:
        K = cert.bias_vector(kind, div)
    return LimitLawParams(H=cert.hessian, sigma=cert.sigma, K=K, a=a)
