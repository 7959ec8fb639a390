"""Stochastic optimization problems with analytic derivatives and oracle ground truth.

Each problem bundles a smooth loss h(x, xi) with its x-derivatives, a seeded
sampler for the data distribution, an optional constraint set, and an oracle
certificate holding the true optimum, the curvature at the optimum, the
influence function of the empirical solution map, and per-procedure bias
vectors.  All certificates are closed form; no numeric integration enters the
oracle path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit as sigmoid


class InfeasibleError(ValueError):
    """Point violates the problem's feasible region."""


class ModelError(ValueError):
    pass


# -- domain types -------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    """A single smooth constraint g(x) (= 0 or <= 0)."""
    g: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    kind: str = "eq"  # 'eq' | 'ineq'


@dataclass(frozen=True)
class ConstraintSet:
    constraints: tuple
    binding: tuple          # indices binding at x*
    multipliers: tuple      # Lagrange multipliers, aligned with `binding`


@dataclass(frozen=True)
class Dataset:
    """A bag of i.i.d. draws with provenance."""
    values: np.ndarray      # shape (n, k)
    problem_id: str
    seed: int

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ParametricModel:
    """Parametric view psi(x, theta) with MLE, influence function and conjugate prior."""
    param_dim: int
    theta_star: np.ndarray
    psi: Callable[[np.ndarray, np.ndarray], float]
    psi_grad_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    psi_hess_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mle: Callable[[Dataset], np.ndarray]
    influence_theta: Callable[[np.ndarray], np.ndarray]
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    # posterior(dataset, prior_mean, prior_cov) -> (mean, cov); Gaussian conjugacy
    posterior: Callable = None
    # E over the posterior N(mean, cov) of psi(x, .): value/grad/hess in x
    posterior_objective: Callable = None


DEGENERACY_TOL = 1e-10


@dataclass(frozen=True)
class OracleCertificate:
    """Ground truth for a catalog problem.

    `hessian` is the curvature governing the optimality gap: the plain Hessian
    of the true objective at the optimum, or the Lagrangian Hessian when
    constraints bind.  `bias` maps procedure kinds to their first-order bias
    direction K; the divergence-robust direction is stored unscaled and gets
    multiplied by sqrt(2 * phi*''(0)) at query time (the coefficient that the
    exact dual reproduces numerically).
    """
    x_star: np.ndarray
    z_star: float
    objective: Callable[[np.ndarray], float]
    hessian: np.ndarray
    influence: Callable[[np.ndarray], np.ndarray]
    sigma: np.ndarray
    bias: dict
    grad_cov: np.ndarray
    dro_direction: Optional[np.ndarray] = None

    def bias_vector(self, kind: str, divergence=None) -> np.ndarray:
        if kind in ("eo", "constrained-eo"):
            return np.zeros_like(self.x_star)
        if kind in ("dro-divergence", "dro-lagrangian"):
            if self.dro_direction is None:
                raise ModelError(f"no divergence-robust bias certified for this problem")
            if divergence is None:
                raise ModelError("divergence required for the robust bias vector")
            return math.sqrt(2.0 * divergence.curvature_at_zero) * self.dro_direction
        try:
            return self.bias[kind]
        except KeyError:
            raise ModelError(f"no bias vector certified for procedure kind {kind!r}")

    def is_degenerate(self, kind: str, divergence=None) -> bool:
        """True when K'HK is numerically zero and dominance claims are inconclusive."""
        k = self.bias_vector(kind, divergence)
        return float(k @ self.hessian @ k) < DEGENERACY_TOL


@dataclass(frozen=True)
class ProblemSpec:
    id: str
    dim: int
    loss: Callable[[np.ndarray, np.ndarray], np.ndarray]          # (d,), (n,k) -> (n,)
    loss_grad: Callable[[np.ndarray, np.ndarray], np.ndarray]     # -> (n, d)
    loss_hess: Callable[[np.ndarray, np.ndarray], np.ndarray]     # -> (n, d, d)
    sampler: Callable[[int, int], np.ndarray]                     # (n, seed) -> (n, k)
    certificate: OracleCertificate
    constraints: Optional[ConstraintSet] = None
    lipschitz: Optional[Callable[[np.ndarray], float]] = None
    lipschitz_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz_hess: Optional[Callable[[np.ndarray], np.ndarray]] = None
    parametric: Optional[ParametricModel] = None

    def feasible(self, x: np.ndarray, tol: float = 1e-6) -> bool:
        if self.constraints is None:
            return True
        for c in self.constraints.constraints:
            v = c.g(np.asarray(x, dtype=float))
            if c.kind == "eq" and abs(v) > tol:
                return False
            if c.kind == "ineq" and v > tol:
                return False
        return True


# -- operations ---------------------------------------------------------------

def sample_dataset(problem: ProblemSpec, n: int, seed: int) -> Dataset:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Dataset(values=problem.sampler(n, seed), problem_id=problem.id, seed=seed)


def true_gap(problem: ProblemSpec, x) -> float:
    """Optimality gap Z(x) - Z(x*) of a candidate decision under the true distribution."""
    x = np.asarray(x, dtype=float)
    if not problem.feasible(x):
        raise InfeasibleError(f"point {x} violates the feasible region of {problem.id}")
    return float(problem.certificate.objective(x)) - problem.certificate.z_star


def eo_influence(problem: ProblemSpec, xi) -> np.ndarray:
    """Influence function -H^{-1} grad h(x*, xi) of the empirical solution map."""
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = problem.certificate.influence(xi)
    return out


def lagrangian_hessian(problem: ProblemSpec) -> np.ndarray:
    """Curvature at the optimum: Lagrangian Hessian if constraints bind, else plain."""
    if problem.constraints is not None and not problem.constraints.multipliers and problem.constraints.binding:
        raise ModelError("constrained problem without certified multipliers")
    return problem.certificate.hessian.copy()


# -- catalog ------------------------------------------------------------------

def _gaussian_sampler(mu, chol, dim):
    mu = np.asarray(mu, dtype=float)

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        return mu + rng.standard_normal((n, dim)) @ chol.T

    return sampler


def _quadratic_loss(dim):
    def loss(x, xi):
        diff = x - xi
        return 0.5 * np.sum(diff * diff, axis=1)

    def grad(x, xi):
        return x - xi

    def hess(x, xi):
        return np.broadcast_to(np.eye(dim), (xi.shape[0], dim, dim))

    return loss, grad, hess


def gaussian_mean(mu=(0.0, 0.0), cov=None, id="gaussian-mean",
                  extra_loss_const=0.0) -> ProblemSpec:
    """h(x, xi) = ||x - xi||^2 / 2 with xi ~ N(mu, cov).  Everything closed form."""
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    cov = np.eye(d) if cov is None else np.asarray(cov, dtype=float)
    chol = np.linalg.cholesky(cov)
    loss, grad, hess = _quadratic_loss(d)
    if extra_loss_const:
        base_loss = loss
        loss = lambda x, xi: base_loss(x, xi) + extra_loss_const
    z_const = 0.5 * float(np.trace(cov)) + extra_loss_const

    cert = OracleCertificate(
        x_star=mu.copy(),
        z_star=z_const,
        objective=lambda x: 0.5 * float(np.sum((np.asarray(x) - mu) ** 2)) + z_const,
        hessian=np.eye(d),
        influence=lambda xi: np.atleast_2d(xi) - mu,
        sigma=cov.copy(),
        bias={
            "regularized": -mu.copy(),          # ridge R(x) = ||x||^2/2
            "parametric-plugin": -mu.copy(),
            "bayesian": -mu.copy(),
        },
        grad_cov=cov.copy(),
        # Cov(h, grad h) vanishes at the mean of a Gaussian by symmetry
        dro_direction=np.zeros(d),
    )
    return ProblemSpec(
        id=id, dim=d, loss=loss, loss_grad=grad, loss_hess=hess,
        sampler=_gaussian_sampler(mu, chol, d), certificate=cert,
    )


def shifted_gaussian_mean() -> ProblemSpec:
    return gaussian_mean(mu=(1.0, 0.0), id="shifted-gaussian-mean")


def gaussian_mle() -> ProblemSpec:
    """Negative log-likelihood loss for a N(x, I) model; the Cramer-Rao showcase."""
    d = 2
    const = 0.5 * d * math.log(2 * math.pi)
    return gaussian_mean(mu=(0.3, -0.2), id="gaussian-mle", extra_loss_const=const)


def exp_quadratic(rate: float = 1.0, id="exp-quadratic") -> ProblemSpec:
    """d=1 quadratic loss under a skewed Exp(rate) distribution.

    The skew makes Cov(h, grad h) at the optimum nonzero, so the
    divergence-robust procedures carry a genuine first-order bias.
    """
    m = 1.0 / rate
    mu2 = 1.0 / rate ** 2           # central moments of Exp(rate)
    mu3 = 2.0 / rate ** 3
    mu4 = 9.0 / rate ** 4
    loss, grad, hess = _quadratic_loss(1)

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        return rng.exponential(m, (n, 1))

    x_star = np.array([m])
    cov_h_grad = -0.5 * mu3                 # Cov(h, grad h) at x*
    var_h = 0.25 * (mu4 - mu2 ** 2)
    cert = OracleCertificate(
        x_star=x_star,
        z_star=0.5 * mu2,
        objective=lambda x: 0.5 * float((np.asarray(x)[..., 0] - m) ** 2 + mu2),
        hessian=np.eye(1),
        influence=lambda xi: np.atleast_2d(xi) - m,
        sigma=np.array([[mu2]]),
        bias={"regularized": -x_star.copy()},
        grad_cov=np.array([[mu2]]),
        dro_direction=np.array([-cov_h_grad / math.sqrt(var_h)]),
    )
    return ProblemSpec(
        id=id, dim=1, loss=loss, loss_grad=grad, loss_hess=hess,
        sampler=sampler, certificate=cert,
    )


def logistic_1d(p: float = 0.75, id="logistic-1d") -> ProblemSpec:
    """Smooth bounded-support loss h(x, xi) = log(1 + exp(-x xi)), xi in {-1, +1}.

    P(xi = +1) = p.  The Lipschitz modulus of h(x, .) over the real line is |x|,
    which drives the 1-Wasserstein / Lipschitz-regularization experiments.
    """
    if not 0.5 < p < 1.0:
        raise ModelError("p must lie in (0.5, 1) so that x* > 0")
    q = 1.0 - p
    x_star = math.log(p / q)
    H = p * q                               # E[xi^2 sigma'(-x* xi)] = sigma'(x*)
    log_ratio = math.log(p / q)

    def loss(x, xi):
        return np.logaddexp(0.0, -x[0] * xi[:, 0])

    def grad(x, xi):
        s = xi[:, 0]
        return (-s * sigmoid(-x[0] * s))[:, None]

    def hess(x, xi):
        s = xi[:, 0]
        u = sigmoid(-x[0] * s)
        return (s * s * u * (1.0 - u))[:, None, None]

    def sampler(n, seed):
        rng = np.random.default_rng(seed)
        return np.where(rng.random((n, 1)) < p, 1.0, -1.0)

    def z(x):
        v = np.asarray(x, dtype=float).reshape(-1)[0]
        return p * np.logaddexp(0.0, -v) + q * np.logaddexp(0.0, v)

    def influence(xi):
        s = np.atleast_2d(xi)[:, 0]
        return (s * sigmoid(-x_star * s) / H)[:, None]

    cov_h_grad = H * log_ratio              # two-point covariance, closed form
    var_h = H * log_ratio ** 2
    cert = OracleCertificate(
        x_star=np.array([x_star]),
        z_star=float(z(x_star)),
        objective=z,
        hessian=np.array([[H]]),
        influence=influence,
        sigma=np.array([[1.0 / H]]),
        bias={
            "regularized": np.array([-x_star / H]),
            "dro-wasserstein1": np.array([-1.0 / H]),   # -H^{-1} sign(x*)
        },
        grad_cov=np.array([[H]]),
        dro_direction=np.array([-cov_h_grad / math.sqrt(var_h)]),
    )
    return ProblemSpec(
        id=id, dim=1, loss=loss, loss_grad=grad, loss_hess=hess,
        sampler=sampler, certificate=cert,
        lipschitz=lambda x: abs(float(np.asarray(x).reshape(-1)[0])),
        lipschitz_grad=lambda x: np.array([math.copysign(1.0, float(np.asarray(x).reshape(-1)[0]))]),
        lipschitz_hess=lambda x: np.zeros((1, 1)),
    )


def sphere_constrained_gaussian(mu=(2.0, 0.0), radius: float = 1.0,
                                id="sphere-constrained-gaussian") -> ProblemSpec:
    """Quadratic Gaussian loss restricted to the sphere ||x|| = radius."""
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    norm_mu = float(np.linalg.norm(mu))
    if norm_mu <= radius:
        raise ModelError("mean must lie outside the sphere so the constraint binds")
    mu_hat = mu / norm_mu
    x_star = radius * mu_hat
    alpha_star = 0.5 * (norm_mu / radius - 1.0)
    loss, grad, hess = _quadratic_loss(d)
    chol = np.eye(d)
    proj = np.eye(d) - np.outer(mu_hat, mu_hat)
    scale = radius / norm_mu
    z_const = 0.5 * d

    sphere = Constraint(
        g=lambda x: float(np.sum(np.asarray(x) ** 2)) - radius ** 2,
        grad=lambda x: 2.0 * np.asarray(x, dtype=float),
        hess=lambda x: 2.0 * np.eye(d),
        kind="eq",
    )
    cset = ConstraintSet(constraints=(sphere,), binding=(0,), multipliers=(alpha_star,))
    cert = OracleCertificate(
        x_star=x_star,
        z_star=0.5 * (norm_mu - radius) ** 2 + z_const,
        objective=lambda x: 0.5 * float(np.sum((np.asarray(x) - mu) ** 2)) + z_const,
        hessian=(norm_mu / radius) * np.eye(d),
        influence=lambda xi: scale * (np.atleast_2d(xi) - mu) @ proj.T,
        sigma=scale ** 2 * proj,
        bias={},
        grad_cov=np.eye(d),
    )
    return ProblemSpec(
        id=id, dim=d, loss=loss, loss_grad=grad, loss_hess=hess,
        sampler=_gaussian_sampler(mu, chol, d), certificate=cert,
        constraints=cset,
    )


def gaussian_parametric(theta=(1.0, 0.0), prior_mean=(0.0, 0.0),
                        prior_var: float = 4.0, id="gaussian-parametric") -> ProblemSpec:
    """psi(x, theta) = E_{N(theta, I)} ||x - xi||^2 / 2 with a conjugate Gaussian prior."""
    theta = np.asarray(theta, dtype=float)
    d = theta.size
    base = gaussian_mean(mu=theta, id=id)
    prior_mean = np.asarray(prior_mean, dtype=float)
    const = 0.5 * d

    def psi(x, th):
        return 0.5 * float(np.sum((np.asarray(x) - th) ** 2)) + const

    def posterior(dataset, m0, c0):
        n = dataset.n
        xbar = dataset.values.mean(axis=0)
        prec0 = np.linalg.inv(c0)
        cov = np.linalg.inv(n * np.eye(d) + prec0)
        mean = cov @ (n * xbar + prec0 @ m0)
        if np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ModelError("posterior covariance not positive definite")
        return mean, cov

    def posterior_objective(mean, cov):
        c = const + 0.5 * float(np.trace(cov))

        def value(x):
            return 0.5 * float(np.sum((x - mean) ** 2)) + c

        return value, (lambda x: x - mean), (lambda x: np.eye(d))

    model = ParametricModel(
        param_dim=d,
        theta_star=theta.copy(),
        psi=psi,
        psi_grad_x=lambda x, th: np.asarray(x, dtype=float) - th,
        psi_hess_x=lambda x, th: np.eye(d),
        mle=lambda dataset: dataset.values.mean(axis=0),
        influence_theta=lambda xi: np.atleast_2d(xi) - theta,
        prior_mean=prior_mean,
        prior_cov=prior_var * np.eye(d),
        posterior=posterior,
        posterior_objective=posterior_objective,
    )
    return ProblemSpec(
        id=id, dim=d, loss=base.loss, loss_grad=base.loss_grad, loss_hess=base.loss_hess,
        sampler=base.sampler, certificate=base.certificate, parametric=model,
    )


CATALOG = {
    "gaussian-mean": gaussian_mean,
    "shifted-gaussian-mean": shifted_gaussian_mean,
    "exp-quadratic": exp_quadratic,
    "logistic-1d": logistic_1d,
    "sphere-constrained-gaussian": sphere_constrained_gaussian,
    "gaussian-parametric": gaussian_parametric,
    "gaussian-mle": gaussian_mle,
}


def list_problems():
    return sorted(CATALOG)


def get_problem(problem_id: str) -> ProblemSpec:
    try:
        return CATALOG[problem_id]()
    except KeyError:
        raise ModelError(f"unknown problem id {problem_id!r}; known: {list_problems()}")


def problem_from_json(doc: dict) -> ProblemSpec:
    """Build a custom problem from a declarative description.

    Supported combinations: gaussian/quadratic, exponential/quadratic,
    two-point/logistic.  Example::

        {"id": "wide-gaussian", "loss": {"family": "quadratic"},
         "distribution": {"family": "gaussian", "mean": [0, 0], "cov": 2.0}}
    """
    if "id" in doc and "distribution" not in doc:
        return get_problem(doc["id"])
    dist = doc["distribution"]
    loss_family = doc.get("loss", {}).get("family", "quadratic")
    pid = doc.get("id", f"custom-{dist['family']}-{loss_family}")
    fam = dist["family"]
    if fam == "gaussian" and loss_family == "quadratic":
        mean = np.asarray(dist.get("mean", [0.0, 0.0]), dtype=float)
        cov = dist.get("cov", 1.0)
        cov = float(cov) * np.eye(mean.size) if np.isscalar(cov) else np.asarray(cov, dtype=float)
        return gaussian_mean(mu=mean, cov=cov, id=pid)
    if fam == "exponential" and loss_family == "quadratic":
        return exp_quadratic(rate=float(dist.get("rate", 1.0)), id=pid)
    if fam == "two-point" and loss_family == "logistic":
        return logistic_1d(p=float(dist.get("p", 0.75)), id=pid)
    raise ModelError(f"unsupported distribution/loss combination: {fam}/{loss_family}")


# -- derivative verification ---------------------------------------------------

def check_derivatives(problem: ProblemSpec, points: int = 20, seed: int = 0,
                      grad_tol: float = 1e-6, hess_tol: float = 1e-5) -> dict:
    """Finite-difference audit of the analytic loss derivatives.

    Returns the worst relative errors over `points` random (x, xi) pairs;
    raises nothing so callers can report.
    """
    rng = np.random.default_rng(seed)
    xi = problem.sampler(points, seed + 1)
    worst_g, worst_h = 0.0, 0.0
    hstep = 1e-6
    for i in range(points):
        x = problem.certificate.x_star + rng.uniform(-0.5, 0.5, problem.dim)
        one = xi[i:i + 1]
        g = problem.loss_grad(x, one)[0]
        hmat = problem.loss_hess(x, one)[0]
        scale_g = max(1.0, float(np.linalg.norm(g)))
        for j in range(problem.dim):
            e = np.zeros(problem.dim)
            e[j] = hstep
            fd = (problem.loss(x + e, one)[0] - problem.loss(x - e, one)[0]) / (2 * hstep)
            worst_g = max(worst_g, abs(fd - g[j]) / scale_g)
            fd_col = (problem.loss_grad(x + e, one)[0] - problem.loss_grad(x - e, one)[0]) / (2 * hstep)
            scale_h = max(1.0, float(np.linalg.norm(hmat[:, j])))
            worst_h = max(worst_h, float(np.max(np.abs(fd_col - hmat[:, j]))) / scale_h)
    return {
        "grad_rel_err": worst_g,
        "hess_rel_err": worst_h,
        "ok": worst_g <= grad_tol and worst_h <= hess_tol,
    }
