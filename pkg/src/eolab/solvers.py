"""Data-driven solution procedures: empirical optimization and its expansions.

All solvers are pure functions (problem, dataset, spec) -> Solution built on a
damped-Newton core.  The divergence-robust procedures evaluate the inner
worst case through its smooth convex dual; by Danskin's theorem the gradient of
the worst-case objective in x is the attaining-weight average of the loss
gradients, which the outer Newton iteration consumes directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .divergence import PhiDivergence, divergence_value, get_divergence
from .model import Dataset, ProblemSpec, ParametricModel, ModelError


class SolverError(RuntimeError):
    pass


class ConvergenceError(SolverError):
    """Newton iteration failed to reach the stationarity tolerance."""


class DualDegeneracyError(SolverError):
    """Inner dual collapsed to the ess-sup branch (alpha -> 0)."""


GRAD_TOL = 1e-10
MAX_ITERS = 200
ARMIJO_C = 1e-4

PROCEDURE_KINDS = (
    "eo", "regularized", "dro-divergence", "dro-lagrangian",
    "dro-wasserstein1", "parametric-plugin", "bayesian", "constrained-eo",
)


def _ridge(x):
    return 0.5 * float(x @ x)


def _ridge_grad(x):
    return np.asarray(x, dtype=float)


PENALTIES = {
    "ridge": (_ridge, _ridge_grad, lambda x: np.eye(np.asarray(x).size)),
}


@dataclass(frozen=True)
class ProcedureSpec:
    """A named solution procedure with its tuning weight lambda.

    For divergence DRO, lambda is the ball radius (the solution shift scales
    like sqrt(lambda)); for every other kind it multiplies the penalty.
    """
    kind: str
    lam: float = 0.0
    penalty: str = "ridge"
    divergence: Optional[str] = None

    def __post_init__(self):
        if self.kind not in PROCEDURE_KINDS:
            raise SolverError(f"unknown procedure kind {self.kind!r}")
        if self.lam < 0:
            raise SolverError("lambda must be >= 0")
        if self.kind in ("dro-divergence", "dro-lagrangian") and self.divergence is None:
            object.__setattr__(self, "divergence", "kl")

    def to_json(self) -> dict:
        doc = {"kind": self.kind, "lambda": self.lam}
        if self.kind == "regularized" or self.lam and self.kind in ("parametric-plugin", "bayesian"):
            doc["penalty"] = self.penalty
        if self.divergence is not None:
            doc["divergence"] = self.divergence
        return doc

    @staticmethod
    def from_json(doc: dict) -> "ProcedureSpec":
        return ProcedureSpec(
            kind=doc["kind"],
            lam=float(doc.get("lambda", 0.0)),
            penalty=doc.get("penalty", "ridge"),
            divergence=doc.get("divergence"),
        )


@dataclass(frozen=True)
class Solution:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float
    converged: bool
    alpha: Optional[float] = None
    beta: Optional[float] = None
    weights: Optional[np.ndarray] = None
    multipliers: Optional[np.ndarray] = None


# -- Newton core ---------------------------------------------------------------

def _newton_minimize(value, grad, hess, x0, tol=GRAD_TOL, max_iters=MAX_ITERS):
    """Damped Newton with Armijo backtracking; gradient-step fallback on a
    singular Newton system.  Returns (x, iterations, grad_norm, converged)."""
    x = np.asarray(x0, dtype=float).copy()
    g = grad(x)
    it = 0
    for it in range(1, max_iters + 1):
        gn = float(np.linalg.norm(g))
        if gn <= tol:
            return x, it - 1, gn, True
        H = hess(x)
        try:
            step = np.linalg.solve(H, -g)
            if not np.all(np.isfinite(step)) or float(step @ g) >= 0:
                step = -g
        except np.linalg.LinAlgError:
            step = -g
        f0 = value(x)
        slope = float(g @ step)
        # rounding slack: near the optimum the decrease drops below the
        # floating-point resolution of the objective
        noise = 4e-16 * max(1.0, abs(f0))
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            if value(x_new) <= f0 + ARMIJO_C * t * slope + noise:
                break
            t *= 0.5
        else:
            x_new = x
        if np.array_equal(x_new, x):
            break
        x = x_new
        g = grad(x)
    gn = float(np.linalg.norm(g))
    return x, it, gn, gn <= tol


def _empirical_objective(problem: ProblemSpec, dataset: Dataset):
    xi = dataset.values

    def value(x):
        return float(np.mean(problem.loss(x, xi)))

    def grad(x):
        return problem.loss_grad(x, xi).mean(axis=0)

    def hess(x):
        return problem.loss_hess(x, xi).mean(axis=0)

    return value, grad, hess


# -- procedures ----------------------------------------------------------------

def solve_eo(problem: ProblemSpec, dataset: Dataset) -> Solution:
    """Minimize the sample-average objective by damped Newton."""
    if dataset.n < 1:
        raise SolverError("empty dataset")
    value, grad, hess = _empirical_objective(problem, dataset)
    x, it, gn, ok = _newton_minimize(value, grad, hess, problem.certificate.x_star)
    if not ok:
        raise ConvergenceError(f"solve_eo stalled at grad norm {gn:g}")
    return Solution(x=x, value=value(x), iterations=it, grad_norm=gn, converged=ok)


def solve_regularized(problem: ProblemSpec, dataset: Dataset, spec: ProcedureSpec) -> Solution:
    """Minimize E_hat[h] + lambda * R(x)."""
    if spec.lam == 0.0:
        return solve_eo(problem, dataset)
    R, Rg, Rh = PENALTIES[spec.penalty]
    value, grad, hess = _empirical_objective(problem, dataset)
    lam = spec.lam
    x, it, gn, ok = _newton_minimize(
        lambda x: value(x) + lam * R(x),
        lambda x: grad(x) + lam * Rg(x),
        lambda x: hess(x) + lam * Rh(x),
        problem.certificate.x_star,
    )
    if not ok:
        raise ConvergenceError(f"solve_regularized stalled at grad norm {gn:g}")
    return Solution(x=x, value=value(x) + lam * R(x), iterations=it, grad_norm=gn, converged=ok)


# -- divergence-ball worst case --------------------------------------------------

def _dual_objective(h, div, lam, alpha, beta):
    s = (h - beta) / alpha
    return alpha * float(np.mean(div.conjugate(s))) + alpha * lam + beta


def worst_case_expectation(h_values, div: PhiDivergence, lam: float):
    """sup { E_Q[h] : D(Q, P_hat) <= lam } over reweightings Q of the sample.

    Solved through the convex dual min_{alpha>0, beta}
    alpha E[phi*((h - beta)/alpha)] + alpha*lam + beta by Newton on (alpha, beta)
    with an analytic 2x2 Hessian.  Returns (value, weights, alpha, beta).
    """
    h = np.asarray(h_values, dtype=float)
    if not np.all(np.isfinite(h)):
        raise SolverError("loss values must be finite")
    n = h.size
    mean = float(h.mean())
    if lam == 0.0:
        return mean, np.full(n, 1.0 / n), None, mean
    if lam < 0:
        raise SolverError("lambda must be >= 0")
    var = float(h.var())
    # the worst case lies in [mean, max], so a spread at rounding scale is
    # indistinguishable from the all-equal case
    spread = float(h.max() - h.min())
    if spread <= 1e-9 * max(1.0, abs(mean)):
        return mean, np.full(n, 1.0 / n), None, mean

    curv = div.curvature_at_zero
    alpha = math.sqrt(curv * var / (2.0 * lam))
    beta = mean

    def grad_hess(alpha, beta):
        s = (h - beta) / alpha
        cp = div.conjugate_prime(s)
        cd = div.conjugate_double(s)
        c = div.conjugate(s)
        g_beta = 1.0 - float(np.mean(cp))
        g_alpha = float(np.mean(c)) - float(np.mean(cp * s)) + lam
        h_bb = float(np.mean(cd)) / alpha
        h_ab = float(np.mean(cd * s)) / alpha
        h_aa = float(np.mean(cd * s * s)) / alpha
        return np.array([g_alpha, g_beta]), np.array([[h_aa, h_ab], [h_ab, h_bb]])

    converged = False
    for _ in range(MAX_ITERS):
        g, H = grad_hess(alpha, beta)
        if float(np.linalg.norm(g)) <= 1e-12:
            converged = True
            break
        try:
            step = np.linalg.solve(H + 1e-14 * np.eye(2), -g)
        except np.linalg.LinAlgError:
            step = -g
        if float(step @ g) >= 0:
            step = -g
        f0 = _dual_objective(h, div, lam, alpha, beta)
        slope = float(g @ step)
        t = 1.0
        while alpha + t * step[0] <= 0:
            t *= 0.5
        moved = False
        for _ in range(80):
            a_new, b_new = alpha + t * step[0], beta + t * step[1]
            if _dual_objective(h, div, lam, a_new, b_new) <= f0 + ARMIJO_C * t * slope:
                alpha, beta = a_new, b_new
                moved = True
                break
            t *= 0.5
        if not moved:
            break
    if alpha < 1e-12:
        raise DualDegeneracyError("inner dual hit the ess-sup branch (alpha ~ 0)")
    if not converged:
        g, _ = grad_hess(alpha, beta)
        if float(np.linalg.norm(g)) > 1e-8:
            # conjugates that are only C^1 (e.g. the chi-square branch point)
            # can park the optimum on a curvature kink where Newton stalls;
            # finish with a quasi-Newton pass over (log alpha, beta)
            from scipy.optimize import minimize

            def f_and_g(v):
                a = math.exp(v[0])
                gg, _ = grad_hess(a, v[1])
                return (_dual_objective(h, div, lam, a, v[1]),
                        np.array([a * gg[0], gg[1]]))

            res = minimize(f_and_g, np.array([math.log(alpha), beta]),
                           jac=True, method="L-BFGS-B",
                           options={"maxiter": 500, "ftol": 1e-16, "gtol": 1e-12})
            alpha, beta = math.exp(res.x[0]), float(res.x[1])
            if alpha < 1e-12:
                raise DualDegeneracyError("inner dual hit the ess-sup branch (alpha ~ 0)")
            g, _ = grad_hess(alpha, beta)
            if float(np.linalg.norm(g)) > 1e-6:
                raise ConvergenceError("worst-case dual did not converge")

    value = _dual_objective(h, div, lam, alpha, beta)
    w = np.asarray(div.conjugate_prime((h - beta) / alpha), dtype=float) / n
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    return value, w, alpha, beta


def _polish_nonsmooth(value, x0):
    """Derivative-free fallback for worst-case objectives with weight kinks.

    Returns (x, ok): ok is True when x passes a coordinate-probe local
    optimality check, which certifies a kink minimum that the smooth Newton
    path cannot (the Danskin gradient is one-sided there).
    """
    from scipy.optimize import minimize

    res = minimize(value, x0, method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 2000,
                            "maxfev": 4000})
    x = np.asarray(res.x, dtype=float)
    f = value(x)
    step = 1e-7 * max(1.0, float(np.linalg.norm(x)))
    for j in range(x.size):
        e = np.zeros(x.size)
        e[j] = step
        if value(x + e) < f - 1e-12 or value(x - e) < f - 1e-12:
            return x, False
    return x, True


def solve_dro_divergence(problem: ProblemSpec, dataset: Dataset,
                         div: PhiDivergence, lam: float) -> Solution:
    """Minimize the lam-radius divergence-ball worst case over x."""
    if lam == 0.0:
        return solve_eo(problem, dataset)
    xi = dataset.values
    state = {}

    def value(x):
        v, w, a, b = worst_case_expectation(problem.loss(x, xi), div, lam)
        state["w"], state["alpha"], state["beta"] = w, a, b
        return v

    def grad(x):
        value(x)
        return state["w"] @ problem.loss_grad(x, xi)

    def hess(x):
        # Gauss-Newton surrogate: the attaining-weight average curvature.
        return np.einsum("i,ijk->jk", state["w"], problem.loss_hess(x, xi))

    x, it, gn, ok = _newton_minimize(value, grad, hess, problem.certificate.x_star, tol=1e-10)
    if not ok and gn > 1e-8:
        x, ok = _polish_nonsmooth(value, x)
        if not ok:
            raise ConvergenceError(f"solve_dro_divergence stalled at grad norm {gn:g}")
        gn = 0.0
    v = value(x)
    return Solution(x=x, value=v, iterations=it, grad_norm=gn, converged=True,
                    alpha=state["alpha"], beta=state["beta"], weights=state["w"])


def ldro_inner(h_values, div: PhiDivergence, lam: float):
    """max_Q { E_Q[h] - D(Q, P_hat)/lam } via its 1-D dual over beta.

    The dual is min_beta (1/lam) E[phi*(lam (h - beta))] + beta whose
    stationarity E[phi*'(lam (h - beta))] = 1 is monotone in beta; solved by
    bracketed root finding.  Returns (value, weights, beta).
    """
    from scipy.optimize import brentq

    h = np.asarray(h_values, dtype=float)
    n = h.size
    mean = float(h.mean())
    if lam == 0.0 or float(h.max() - h.min()) <= 1e-9 * max(1.0, abs(mean)):
        return mean, np.full(n, 1.0 / n), mean

    lo, hi = float(h.min()), float(h.max())

    def r(beta):
        return float(np.mean(div.conjugate_prime(lam * (h - beta)))) - 1.0

    rlo, rhi = r(lo), r(hi)
    if rlo <= 0:
        beta = lo
    elif rhi >= 0:
        beta = hi
    else:
        beta = brentq(r, lo, hi, xtol=1e-14)
    value = float(np.mean(div.conjugate(lam * (h - beta)))) / lam + beta
    w = np.asarray(div.conjugate_prime(lam * (h - beta)), dtype=float) / n
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    return value, w, beta


def solve_dro_lagrangian(problem: ProblemSpec, dataset: Dataset,
                         div: PhiDivergence, lam: float) -> Solution:
    """Minimize over x the divergence-penalized worst case (penalty 1/lam)."""
    if lam == 0.0:
        return solve_eo(problem, dataset)
    xi = dataset.values
    state = {}

    def value(x):
        v, w, b = ldro_inner(problem.loss(x, xi), div, lam)
        state["w"], state["beta"] = w, b
        return v

    def grad(x):
        value(x)
        return state["w"] @ problem.loss_grad(x, xi)

    def hess(x):
        return np.einsum("i,ijk->jk", state["w"], problem.loss_hess(x, xi))

    x, it, gn, ok = _newton_minimize(value, grad, hess, problem.certificate.x_star, tol=1e-10)
    if not ok and gn > 1e-8:
        x, ok = _polish_nonsmooth(value, x)
        if not ok:
            raise ConvergenceError(f"solve_dro_lagrangian stalled at grad norm {gn:g}")
        gn = 0.0
    return Solution(x=x, value=value(x), iterations=it, grad_norm=gn, converged=True,
                    beta=state["beta"], weights=state["w"])


def solve_dro_wasserstein(problem: ProblemSpec, dataset: Dataset, lam: float) -> Solution:
    """Minimize E_hat[h(x, .)] + lam * Lip(h(x, .)); the order-1 transport dual."""
    if lam == 0.0:
        return solve_eo(problem, dataset)
    if problem.lipschitz is None or problem.lipschitz_grad is None:
        raise SolverError(f"problem {problem.id!r} certifies no Lipschitz modulus")
    value, grad, hess = _empirical_objective(problem, dataset)
    # the modulus may be kinked where it vanishes (e.g. |x| at the origin);
    # the subgradient optimality test there precedes the smooth Newton path
    origin = np.zeros(problem.dim)
    if problem.lipschitz(origin) == 0.0 and float(np.linalg.norm(grad(origin))) <= lam:
        return Solution(x=origin, value=value(origin), iterations=0,
                        grad_norm=0.0, converged=True)
    lip_h = problem.lipschitz_hess or (lambda x: np.zeros((problem.dim, problem.dim)))
    x, it, gn, ok = _newton_minimize(
        lambda x: value(x) + lam * problem.lipschitz(x),
        lambda x: grad(x) + lam * problem.lipschitz_grad(x),
        lambda x: hess(x) + lam * lip_h(x),
        problem.certificate.x_star,
    )
    if not ok:
        raise ConvergenceError(f"solve_dro_wasserstein stalled at grad norm {gn:g}")
    return Solution(x=x, value=value(x) + lam * problem.lipschitz(x),
                    iterations=it, grad_norm=gn, converged=ok)


def solve_parametric(problem: ProblemSpec, dataset: Dataset, spec: ProcedureSpec) -> Solution:
    """Plug the MLE into the parametric objective, then minimize with penalty."""
    model = problem.parametric
    if model is None:
        raise SolverError(f"problem {problem.id!r} has no parametric model")
    theta = model.mle(dataset)
    R, Rg, Rh = PENALTIES[spec.penalty]
    lam = spec.lam
    x, it, gn, ok = _newton_minimize(
        lambda x: model.psi(x, theta) + lam * R(x),
        lambda x: model.psi_grad_x(x, theta) + lam * Rg(x),
        lambda x: model.psi_hess_x(x, theta) + lam * Rh(x),
        problem.certificate.x_star,
    )
    if not ok:
        raise ConvergenceError(f"solve_parametric stalled at grad norm {gn:g}")
    return Solution(x=x, value=model.psi(x, theta) + lam * R(x),
                    iterations=it, grad_norm=gn, converged=ok)


def solve_bayesian(problem: ProblemSpec, dataset: Dataset, spec: ProcedureSpec,
                   prior_mean=None, prior_cov=None) -> Solution:
    """Minimize the posterior-mean objective E_{Theta|data}[psi(x, Theta)] + lam R(x)."""
    model = problem.parametric
    if model is None or model.posterior is None:
        raise SolverError(f"problem {problem.id!r} has no conjugate Bayesian model")
    m0 = model.prior_mean if prior_mean is None else np.asarray(prior_mean, dtype=float)
    c0 = model.prior_cov if prior_cov is None else np.asarray(prior_cov, dtype=float)
    mean, cov = model.posterior(dataset, m0, c0)
    obj, obj_grad, obj_hess = model.posterior_objective(mean, cov)
    R, Rg, Rh = PENALTIES[spec.penalty]
    lam = spec.lam
    x, it, gn, ok = _newton_minimize(
        lambda x: obj(x) + lam * R(x),
        lambda x: obj_grad(x) + lam * Rg(x),
        lambda x: obj_hess(x) + lam * Rh(x),
        problem.certificate.x_star,
    )
    if not ok:
        raise ConvergenceError(f"solve_bayesian stalled at grad norm {gn:g}")
    return Solution(x=x, value=obj(x) + lam * R(x), iterations=it, grad_norm=gn, converged=ok)


def solve_constrained_eo(problem: ProblemSpec, dataset: Dataset) -> Solution:
    """Newton on the equality-constrained KKT system of the sample objective."""
    if problem.constraints is None:
        return solve_eo(problem, dataset)
    cons = [c for c in problem.constraints.constraints if c.kind == "eq"]
    if len(cons) != len(problem.constraints.constraints):
        raise SolverError("only equality constraints are solved; inequalities must not bind")
    value, grad, hess = _empirical_objective(problem, dataset)
    d, k = problem.dim, len(cons)
    x = problem.certificate.x_star.copy()
    nu = np.asarray(problem.constraints.multipliers, dtype=float).copy()

    def kkt(x, nu):
        r = grad(x) + sum(nu[j] * cons[j].grad(x) for j in range(k))
        return np.concatenate([r, [c.g(x) for c in cons]])

    res = kkt(x, nu)
    it = 0
    for it in range(1, MAX_ITERS + 1):
        rn = float(np.linalg.norm(res))
        if rn <= GRAD_TOL:
            break
        Hl = hess(x) + sum(nu[j] * cons[j].hess(x) for j in range(k))
        J = np.array([c.grad(x) for c in cons])
        M = np.block([[Hl, J.T], [J, np.zeros((k, k))]])
        try:
            step = np.linalg.solve(M, -res)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular KKT system")
        t, moved = 1.0, False
        r0 = float(np.linalg.norm(res))
        for _ in range(60):
            x_new = x + t * step[:d]
            nu_new = nu + t * step[d:]
            res_new = kkt(x_new, nu_new)
            if float(np.linalg.norm(res_new)) < (1.0 - ARMIJO_C * t) * r0:
                x, nu, res, moved = x_new, nu_new, res_new, True
                break
            t *= 0.5
        if not moved:
            break
    rn = float(np.linalg.norm(res))
    if rn > 1e-8:
        raise ConvergenceError(f"constrained EO stalled at KKT residual {rn:g}")
    return Solution(x=x, value=value(x), iterations=it, grad_norm=rn,
                    converged=True, multipliers=nu)


def solve(problem: ProblemSpec, dataset: Dataset, spec: ProcedureSpec) -> Solution:
    """Dispatch a procedure spec; lambda = 0 reduces every kind to its EO path."""
    kind = spec.kind
    if kind == "eo":
        return solve_eo(problem, dataset)
    if kind == "regularized":
        return solve_regularized(problem, dataset, spec)
    if kind == "dro-divergence":
        return solve_dro_divergence(problem, dataset, get_divergence(spec.divergence), spec.lam)
    if kind == "dro-lagrangian":
        return solve_dro_lagrangian(problem, dataset, get_divergence(spec.divergence), spec.lam)
    if kind == "dro-wasserstein1":
        return solve_dro_wasserstein(problem, dataset, spec.lam)
    if kind == "parametric-plugin":
        return solve_parametric(problem, dataset, spec)
    if kind == "bayesian":
        return solve_bayesian(problem, dataset, spec)
    if kind == "constrained-eo":
        return solve_constrained_eo(problem, dataset)
    raise SolverError(f"unknown procedure kind {kind!r}")
