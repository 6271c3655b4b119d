"""Executable numerical certification of the derivations the method rests
on: the joint-likelihood ELBO identity, the marginal/conditional KL chain,
the pairwise marginal split and its failure under correlation, the Jensen
upper bound with its tightness case, cross-entropy/bound stationarity, and
log-concavity of the Gaussian bump in its centroid.

Design notes. The ELBO identity is checked on a linear-Gaussian testbed
where log p(x, y) is available in closed form; quadrature checks use
trapezoid rules on 8-sigma windows, which are spectrally accurate for
these smooth, decaying integrands; Monte-Carlo checks carry their own
standard errors and use 3-sigma tolerances. The stationarity check uses
the cross entropy -log p(j | b) with p(j | b) the mixture responsibility
(the tight-Q classifier), optimized from per-class moment initialization;
see the repository notes for why a learned affine-on-psi head cannot make
the bound gradient vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .distributions import (
    GaussianMixture1D,
    GridDensity,
    class_prior_estimate,
    entropy_quadrature,
    kl_quadrature,
    responsibility,
)
from .rng import substream

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class VerificationReport:
    """Outcome of one numerical check.

    Two-sided checks pass when |gap| <= tolerance; one-sided checks pass
    when gap >= -tolerance. `mc_std_error` is set for Monte-Carlo checks,
    whose tolerances are 3 standard errors.
    """

    check: str
    lhs: float
    rhs: float
    gap: float
    tolerance: float
    passed: bool
    one_sided: bool = False
    mc_std_error: float | None = None
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return asdict(self)


def _two_sided(check, lhs, rhs, tolerance, mc_std_error=None, **details) -> VerificationReport:
    gap = lhs - rhs
    return VerificationReport(check=check, lhs=float(lhs), rhs=float(rhs), gap=float(gap),
                              tolerance=float(tolerance), passed=bool(abs(gap) <= tolerance),
                              mc_std_error=mc_std_error, details=details)


def _one_sided(check, lhs, rhs, tolerance, mc_std_error=None, **details) -> VerificationReport:
    gap = lhs - rhs
    return VerificationReport(check=check, lhs=float(lhs), rhs=float(rhs), gap=float(gap),
                              tolerance=float(tolerance), passed=bool(gap >= -tolerance),
                              one_sided=True, mc_std_error=mc_std_error, details=details)


# ---------------------------------------------------------------------------
# Prop 1: joint-likelihood ELBO identity on a linear-Gaussian testbed
# ---------------------------------------------------------------------------

@dataclass
class LinearGaussianToy:
    """z ~ N(0, I); x | z ~ N(Wz, so^2 I); y | z, x ~ N(Vz + Ux, so^2 I);
    approximate posterior q(z | x) = N(Ax + c, diag(s^2)). Observations
    (x_obs, y_obs) are drawn once from the true process."""

    W: np.ndarray
    V: np.ndarray
    U: np.ndarray
    sigma_obs: float
    A: np.ndarray
    c: np.ndarray
    s: np.ndarray
    x_obs: np.ndarray
    y_obs: np.ndarray

    def __post_init__(self):
        if self.sigma_obs <= 0:
            raise ValueError("sigma_obs must be positive")
        if np.any(self.s <= 0):
            raise ValueError("q scales must be positive elementwise")
        if max(self.dim_z, self.dim_x, self.dim_y) > 4:
            raise ValueError("toy dimensions must be <= 4")
        np.linalg.cholesky(self.joint_cov())  # raises on non-PD

    @property
    def dim_z(self) -> int:
        return self.W.shape[1]

    @property
    def dim_x(self) -> int:
        return self.W.shape[0]

    @property
    def dim_y(self) -> int:
        return self.V.shape[0]

    def joint_cov(self) -> np.ndarray:
        """Covariance of the observed stack (x, y)."""
        so2 = self.sigma_obs**2
        M = self.V + self.U @ self.W
        sxx = self.W @ self.W.T + so2 * np.eye(self.dim_x)
        sxy = self.W @ M.T + so2 * self.U.T
        syy = M @ M.T + so2 * (self.U @ self.U.T) + so2 * np.eye(self.dim_y)
        return np.block([[sxx, sxy], [sxy.T, syy]])

    def log_evidence(self) -> float:
        """Closed-form log p(x_obs, y_obs) by Gaussian marginalization."""
        obs = np.concatenate([self.x_obs, self.y_obs])
        cov = self.joint_cov()
        sign, logdet = np.linalg.slogdet(cov)
        if sign <= 0:
            raise np.linalg.LinAlgError("joint covariance not positive definite")
        quad = obs @ np.linalg.solve(cov, obs)
        return float(-0.5 * (obs.size * LOG_2PI + logdet + quad))

    def exact_posterior(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of p(z | x_obs, y_obs)."""
        M = self.V + self.U @ self.W
        cross = np.hstack([self.W.T, M.T])          # Cov(z, (x, y))
        cov = self.joint_cov()
        obs = np.concatenate([self.x_obs, self.y_obs])
        solve = np.linalg.solve(cov, cross.T)
        mean = solve.T @ obs
        post_cov = np.eye(self.dim_z) - cross @ solve
        return mean, post_cov


def _diag_normal_logpdf(v: np.ndarray, mean: np.ndarray, var: np.ndarray | float) -> np.ndarray:
    diff = v - mean
    var = np.broadcast_to(np.asarray(var, dtype=np.float64), diff.shape)
    return -0.5 * (diff.shape[-1] * LOG_2PI + np.log(var).sum(axis=-1)
                   + (diff * diff / var).sum(axis=-1))


def _full_normal_logpdf(v: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    diff = v - mean
    y = np.linalg.solve(chol, diff.T).T
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (mean.size * LOG_2PI + logdet + (y * y).sum(axis=-1))


def random_toy(seed: int, dim_z: int = 2, dim_x: int = 3, dim_y: int = 2) -> LinearGaussianToy:
    rng = substream(seed, "elbo-toy")
    W = 0.8 * rng.standard_normal((dim_x, dim_z))
    V = 0.8 * rng.standard_normal((dim_y, dim_z))
    U = 0.5 * rng.standard_normal((dim_y, dim_x))
    sigma_obs = float(rng.uniform(0.4, 1.0))
    z_true = rng.standard_normal(dim_z)
    x_obs = W @ z_true + sigma_obs * rng.standard_normal(dim_x)
    y_obs = V @ z_true + U @ x_obs + sigma_obs * rng.standard_normal(dim_y)
    A = 0.5 * rng.standard_normal((dim_z, dim_x))
    c = 0.3 * rng.standard_normal(dim_z)
    s = rng.uniform(0.5, 1.2, size=dim_z)
    return LinearGaussianToy(W, V, U, sigma_obs, A, c, s, x_obs, y_obs)


def exact_posterior_toy(seed: int, dim_z: int = 2, dim_x: int = 3) -> LinearGaussianToy:
    """V = 0 makes y uninformative about z, and an orthogonal-column W
    makes the exact posterior diagonal, so the mean-field q can be set to
    the true posterior exactly."""
    rng = substream(seed, "elbo-exact")
    q, _ = np.linalg.qr(rng.standard_normal((dim_x, dim_z)))
    d = rng.uniform(0.6, 1.6, size=dim_z)
    W = q * d
    U = 0.5 * rng.standard_normal((1, dim_x))
    sigma_obs = float(rng.uniform(0.5, 1.0))
    z_true = rng.standard_normal(dim_z)
    x_obs = W @ z_true + sigma_obs * rng.standard_normal(dim_x)
    y_obs = U @ x_obs + sigma_obs * rng.standard_normal(1)
    post_var = 1.0 / (1.0 + d * d / sigma_obs**2)
    A = (post_var[:, None] * W.T) / sigma_obs**2
    return LinearGaussianToy(W, np.zeros((1, dim_z)), U, sigma_obs,
                             A, np.zeros(dim_z), np.sqrt(post_var), x_obs, y_obs)


def verify_elbo_identity(toy: LinearGaussianToy, n_mc: int, seed: int) -> VerificationReport:
    """|ELBO + posterior-KL - log p(x, y)| within 3 combined standard
    errors, with ELBO and KL estimated on independent sample sets; also
    asserts the bound direction ELBO <= log p(x, y) + 3 se."""
    if n_mc < 10_000:
        raise ValueError("verify_elbo_identity: n_mc must be at least 1e4")
    rng = substream(seed, "elbo-mc")
    so2 = toy.sigma_obs**2
    m_q = toy.A @ toy.x_obs + toy.c
    log_p = toy.log_evidence()
    post_mean, post_cov = toy.exact_posterior()

    def q_samples() -> np.ndarray:
        return m_q + toy.s * rng.standard_normal((n_mc, toy.dim_z))

    z = q_samples()
    log_px_z = _diag_normal_logpdf(toy.x_obs, z @ toy.W.T, so2)
    log_py_zx = _diag_normal_logpdf(toy.y_obs, z @ toy.V.T + toy.U @ toy.x_obs, so2)
    log_prior = _diag_normal_logpdf(z, np.zeros(toy.dim_z), 1.0)
    log_q = _diag_normal_logpdf(z, m_q, toy.s**2)
    elbo_draws = log_py_zx + log_px_z + log_prior - log_q
    elbo = float(elbo_draws.mean())
    se_elbo = float(elbo_draws.std(ddof=1) / math.sqrt(n_mc))

    z2 = q_samples()
    kl_draws = _diag_normal_logpdf(z2, m_q, toy.s**2) - _full_normal_logpdf(z2, post_mean, post_cov)
    kl = float(kl_draws.mean())
    se_kl = float(kl_draws.std(ddof=1) / math.sqrt(n_mc))

    se = math.sqrt(se_elbo**2 + se_kl**2)
    # 1e-9 floor: with q set to the exact posterior the draws are
    # constant, so 3 se alone would sit below float64 rounding noise
    report = _two_sided("elbo_identity", lhs=elbo + kl, rhs=log_p,
                        tolerance=max(3.0 * se, 1e-9), mc_std_error=se,
                        elbo=elbo, posterior_kl=kl, se_elbo=se_elbo, se_kl=se_kl)
    bound_ok = elbo <= log_p + max(3.0 * se_elbo, 1e-9)
    report.passed = bool(report.passed and bound_ok)
    report.details["elbo_below_evidence"] = bool(bound_ok)
    return report


# ---------------------------------------------------------------------------
# Prop 3: KL chain decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KlChainSpec:
    """q(b | x) = N(m_b, s_b^2), q(a | b, x) = N(alpha b + c, s_a^2)."""

    m_b: float
    s_b: float
    alpha: float
    c: float
    s_a: float


def _grid_1d(center: float, spread: float, n: int = 2001) -> np.ndarray:
    half = 8.0 * max(spread, 1.0) + abs(center)
    return np.linspace(-half, half, n)


def verify_kl_chain(q_spec: KlChainSpec, prior_rho: float = 0.0,
                    n: int = 1501) -> VerificationReport:
    """LHS joint KL by 2-D quadrature against RHS = E_b[analytic KL of
    q(a | b, x)] + analytic KL of q(b | x). With the factorized standard
    prior this is an identity; a correlated prior (prior_rho != 0) breaks
    it, which the counterexample path asserts."""
    b = _grid_1d(q_spec.m_b, q_spec.s_b, n)
    a_center = q_spec.alpha * q_spec.m_b + q_spec.c
    a_spread = abs(q_spec.alpha) * 8.0 * max(q_spec.s_b, 1.0) + 8.0 * max(q_spec.s_a, 1.0)
    a = np.linspace(a_center - a_spread - 8.0, a_center + a_spread + 8.0, n)
    A, B = np.meshgrid(a, b, indexing="ij")

    log_qb = -0.5 * (LOG_2PI + ((B - q_spec.m_b) / q_spec.s_b) ** 2) - math.log(q_spec.s_b)
    mean_a = q_spec.alpha * B + q_spec.c
    log_qa = -0.5 * (LOG_2PI + ((A - mean_a) / q_spec.s_a) ** 2) - math.log(q_spec.s_a)
    log_q = log_qa + log_qb
    if prior_rho == 0.0:
        log_p = -0.5 * (2 * LOG_2PI + A * A + B * B)
    else:
        if not -1.0 < prior_rho < 1.0:
            raise ValueError("prior correlation must lie in (-1, 1)")
        det = 1.0 - prior_rho**2
        log_p = -0.5 * (2 * LOG_2PI + math.log(det)
                        + (A * A - 2 * prior_rho * A * B + B * B) / det)

    q = np.exp(log_q)
    integrand = q * (log_q - log_p)
    lhs = float(np.trapezoid(np.trapezoid(integrand, x=b, axis=1), x=a))

    qb = np.exp(-0.5 * ((b - q_spec.m_b) / q_spec.s_b) ** 2) / (math.sqrt(2 * math.pi) * q_spec.s_b)
    inner_kl = 0.5 * (q_spec.s_a**2 + (q_spec.alpha * b + q_spec.c) ** 2
                      - 1.0 - 2.0 * math.log(q_spec.s_a))
    term_a = float(np.trapezoid(qb * inner_kl, x=b))
    term_b = 0.5 * (q_spec.s_b**2 + q_spec.m_b**2 - 1.0 - 2.0 * math.log(q_spec.s_b))
    rhs = term_a + term_b

    if prior_rho == 0.0:
        return _two_sided("kl_chain", lhs=lhs, rhs=rhs, tolerance=1e-6,
                          q_spec=asdict(q_spec), conditional_term=term_a, marginal_term=term_b)
    # counterexample: the decomposition must miss by more than 1e-3
    return _one_sided("kl_chain_correlated_prior", lhs=abs(lhs - rhs), rhs=1e-3,
                      tolerance=0.0, q_spec=asdict(q_spec), prior_rho=prior_rho)


# ---------------------------------------------------------------------------
# Prop 3.5 / Assumption 2: pairwise marginal split
# ---------------------------------------------------------------------------

def verify_pairwise_marginal(mu_i: float, sigma_i: float, mu_j: float, sigma_j: float,
                             rho: float, n: int = 1201) -> VerificationReport:
    """Joint KL of a correlated Gaussian pair to the factorized standard
    prior, versus the sum of the per-dimension KLs. At rho = 0 the split
    is exact; otherwise the excess equals the bivariate Gaussian mutual
    information -log(1 - rho^2)/2, quantifying the naive-independence
    approximation error."""
    if not -1.0 < rho < 1.0:
        raise ValueError("correlation must lie in (-1, 1)")
    gi = _grid_1d(mu_i, sigma_i, n)
    gj = _grid_1d(mu_j, sigma_j, n)
    BI, BJ = np.meshgrid(gi, gj, indexing="ij")
    det = sigma_i**2 * sigma_j**2 * (1.0 - rho**2)
    zi = BI - mu_i
    zj = BJ - mu_j
    quad = (zi**2 / sigma_i**2 - 2 * rho * zi * zj / (sigma_i * sigma_j)
            + zj**2 / sigma_j**2) / (1.0 - rho**2)
    log_q = -0.5 * (2 * LOG_2PI + math.log(det) + quad)
    log_p = -0.5 * (2 * LOG_2PI + BI * BI + BJ * BJ)
    q = np.exp(log_q)
    joint_kl = float(np.trapezoid(np.trapezoid(q * (log_q - log_p), x=gj, axis=1), x=gi))

    split = (0.5 * (sigma_i**2 + mu_i**2 - 1.0 - 2 * math.log(sigma_i))
             + 0.5 * (sigma_j**2 + mu_j**2 - 1.0 - 2 * math.log(sigma_j)))
    excess = joint_kl - split
    if rho == 0.0:
        return _two_sided("pairwise_marginal_independent", lhs=joint_kl, rhs=split,
                          tolerance=1e-10, rho=rho)
    expected_mi = -0.5 * math.log(1.0 - rho**2)
    report = _two_sided("pairwise_marginal_correlated", lhs=excess, rhs=expected_mi,
                        tolerance=1e-5, rho=rho, excess=excess)
    report.details["excess_nonnegative"] = bool(excess >= -1e-10)
    report.passed = bool(report.passed and report.details["excess_nonnegative"])
    return report


# ---------------------------------------------------------------------------
# Prop 4: entropy decomposition and the Jensen upper bound
# ---------------------------------------------------------------------------

def verify_jensen_bound(q: GridDensity, mix: GaussianMixture1D,
                        q_choices: np.ndarray) -> VerificationReport:
    """Three sub-checks on one grid: (i) KL(q || p_b) = -H(q) - E_q log
    sum_k p(b, k); (ii) the bound RHS dominates the cross term for every
    constant Q; (iii) equality at the pointwise responsibilities."""
    grid = q.grid
    log_joint = mix.log_joint(grid)                    # (n, K)
    log_pb = mix.log_marginal(grid)
    p_b = GridDensity(grid, np.exp(log_pb))
    lhs_kl = kl_quadrature(q, p_b)
    cross = -float(np.trapezoid(q.values * log_pb, x=grid))
    rhs_decomp = -entropy_quadrature(q) + cross
    decomposition = _two_sided("jensen_decomposition", lhs=lhs_kl, rhs=rhs_decomp,
                               tolerance=1e-8)

    q_choices = np.atleast_2d(np.asarray(q_choices, dtype=np.float64))
    if np.any(q_choices <= 0) or not np.allclose(q_choices.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("each constant Q must be positive and sum to 1")
    worst = math.inf
    for qk in q_choices:
        rhs_bound = float(np.trapezoid(
            q.values * (qk * (np.log(qk) - log_joint)).sum(axis=1), x=grid))
        worst = min(worst, rhs_bound - cross)
    jensen = _one_sided("jensen_bound_constant_q", lhs=worst, rhs=0.0, tolerance=1e-10,
                        n_choices=int(q_choices.shape[0]))

    resp = responsibility(grid, mix)
    rhs_tight = float(np.trapezoid(
        q.values * (resp * (np.log(resp) - log_joint)).sum(axis=1), x=grid))
    tight = _two_sided("jensen_tightness", lhs=rhs_tight, rhs=cross, tolerance=1e-8)

    return VerificationReport(
        check="jensen_bound",
        lhs=lhs_kl, rhs=rhs_decomp, gap=decomposition.gap,
        tolerance=1e-8,
        passed=bool(decomposition.passed and jensen.passed and tight.passed),
        details={"decomposition": decomposition.to_record(),
                 "constant_q": jensen.to_record(),
                 "tightness": tight.to_record()},
    )


# ---------------------------------------------------------------------------
# Prop 4an + Prop 4b + Cor 2: CE optimum is bound-stationary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoClassToy:
    """Per-class encoder outputs q(b | x) = N(mean_k, scale_k) and raw
    class counts for the empirical prior."""

    counts: tuple[int, int] = (50, 50)
    means: tuple[float, float] = (-2.0, 2.0)
    scales: tuple[float, float] = (1.0, 1.0)


def _ce_objective(theta: np.ndarray, grid: np.ndarray, weights: np.ndarray,
                  pcond: np.ndarray, priors: np.ndarray) -> tuple[float, np.ndarray]:
    """Expected cross entropy -sum_k pi_k E_{b~class k} log p(k | b) on the
    quadrature grid, with the taped gradient w.r.t. (nu, tau)."""
    k = priors.size
    nu = Tensor(theta[:k])
    tau = Tensor(theta[k:])
    with Tape() as tape:
        b = Tensor(grid[:, None])
        z = ad.div(ad.sub(b, nu), tau)
        log_psi = ad.sub(ad.mul(ad.square(z), -0.5),
                         ad.add(ad.log(tau), 0.5 * LOG_2PI))
        log_joint = ad.add(log_psi, np.log(priors))
        log_resp = ad.sub(log_joint, ad.reshape(ad.logsumexp(log_joint, axis=1), (grid.size, 1)))
        ce = ad.negate(ad.tensor_sum(ad.mul(ad.mul(log_resp, pcond.T), weights[:, None])))
        tape.backward(ce)
    grad = np.concatenate([nu.grad, tau.grad])
    return float(ce.data), grad


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.full(grid.size, grid[1] - grid[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _bound_rhs_frozen_q(nu, tau, priors, q_density, resp, grid) -> float:
    log_joint = GaussianMixture1D(priors, nu, tau).log_joint(grid)
    integrand = (resp * (np.log(resp) - log_joint)).sum(axis=1)
    return float(np.trapezoid(q_density * integrand, x=grid))


def verify_ce_bound_stationarity(toy: TwoClassToy, max_iter: int = 500,
                                 fd_step: float = 1e-5) -> VerificationReport:
    """Optimize the Definition-1 cross entropy (responsibility classifier)
    over (nu, tau) from per-class moment initialization, then check that
    the Jensen-bound gradient with Q frozen at the converged
    responsibilities vanishes, agreeing with central differences.

    The expected CE has a one-dimensional stationary ridge (only the class
    posterior is identified); moment initialization selects the
    well-specified representative, which is the point the corollary's
    bound-stationarity claim singles out. A ridge probe is reported in the
    details.
    """
    priors = class_prior_estimate(toy.counts)
    means = np.asarray(toy.means, dtype=np.float64)
    scales = np.asarray(toy.scales, dtype=np.float64)
    lo = means.min() - 8.0 * max(scales.max(), 1.0)
    hi = means.max() + 8.0 * max(scales.max(), 1.0)
    grid = np.linspace(lo, hi, 4001)
    weights = _trapezoid_weights(grid)
    pcond = np.stack([
        np.exp(-0.5 * ((grid - m) / s) ** 2) / (math.sqrt(2 * math.pi) * s)
        for m, s in zip(means, scales)
    ])
    pcond_weighted = pcond * priors[:, None]
    q_density = pcond_weighted.sum(axis=0)

    theta0 = np.concatenate([means, scales])
    result = minimize(
        _ce_objective, theta0, args=(grid, weights, pcond_weighted, priors),
        jac=True, method="L-BFGS-B",
        bounds=[(None, None)] * 2 + [(1e-2, None)] * 2,
        options={"maxiter": max_iter, "ftol": 1e-18, "gtol": 1e-12},
    )
    ce_value, ce_grad = _ce_objective(result.x, grid, weights, pcond_weighted, priors)
    ce_grad_norm = float(np.abs(ce_grad).max())
    nu_hat, tau_hat = result.x[:2], result.x[2:]
    if ce_grad_norm >= 1e-6:
        return VerificationReport(
            check="ce_bound_stationarity", lhs=ce_grad_norm, rhs=0.0, gap=ce_grad_norm,
            tolerance=1e-6, passed=False,
            details={"failure": "cross-entropy optimization did not converge in budget",
                     "iterations": int(result.nit), "ce": ce_value})

    mix_hat = GaussianMixture1D(priors, nu_hat, tau_hat)
    resp = responsibility(grid, mix_hat)

    # Analytic bound gradient (the necessity-condition expressions)
    gnu = np.array([
        -np.trapezoid(q_density * resp[:, k] * (grid - nu_hat[k]) / tau_hat[k] ** 2, x=grid)
        for k in range(2)
    ])
    gtau = np.array([
        -np.trapezoid(q_density * resp[:, k]
                      * ((grid - nu_hat[k]) ** 2 / tau_hat[k] ** 3 - 1.0 / tau_hat[k]), x=grid)
        for k in range(2)
    ])
    analytic = np.concatenate([gnu, gtau])

    # Central differences of the frozen-Q bound RHS
    fd = np.zeros(4)
    theta_hat = np.concatenate([nu_hat, tau_hat])
    for idx in range(4):
        for sign in (+1.0, -1.0):
            theta = theta_hat.copy()
            theta[idx] += sign * fd_step
            value = _bound_rhs_frozen_q(theta[:2], theta[2:], priors, q_density, resp, grid)
            fd[idx] += sign * value
    fd /= 2.0 * fd_step

    agreement = float(np.abs(analytic - fd).max())
    bound_grad_norm = float(np.abs(analytic).max())

    # Factored stationarity (the psi-derivative form of the CE conditions):
    # the effective classifier slope d logit / d psi_k = 1/psi_k must stay
    # away from zero on the grid, and the weighted psi-derivative terms
    # (equal to the CE gradient components) must vanish.
    psi_peak = float(np.max(np.exp(mix_hat.log_joint(grid) - np.log(priors))))
    min_f_prime = 1.0 / psi_peak
    factored_ok = bool(min_f_prime > 1e-8 and ce_grad_norm < 1e-4)

    # Ridge probe (honesty note): a different CE minimizer along the
    # stationary ridge is *not* bound-stationary.
    ridge_tau = tau_hat * 1.05
    ridge_nu = nu_hat * (ridge_tau / tau_hat) ** 2
    ridge_grad = np.abs(np.array([
        -np.trapezoid(q_density * responsibility(grid, GaussianMixture1D(priors, ridge_nu, ridge_tau))[:, k]
                      * (grid - ridge_nu[k]) / ridge_tau[k] ** 2, x=grid)
        for k in range(2)
    ])).max()

    # Local-minimum probe: perturbing nu raises the frozen-Q bound RHS.
    base = _bound_rhs_frozen_q(nu_hat, tau_hat, priors, q_density, resp, grid)
    probe = _bound_rhs_frozen_q(nu_hat + np.array([0.5, 0.0]), tau_hat, priors,
                                q_density, resp, grid)
    probe_increases = bool(probe > base)

    passed = bool(ce_grad_norm < 1e-6 and bound_grad_norm < 1e-4
                  and agreement < 1e-6 and factored_ok and probe_increases)
    return VerificationReport(
        check="ce_bound_stationarity",
        lhs=bound_grad_norm, rhs=0.0, gap=bound_grad_norm, tolerance=1e-4,
        passed=passed, one_sided=False,
        details={
            "ce": ce_value,
            "ce_grad_inf": ce_grad_norm,
            "nu": nu_hat.tolist(),
            "tau": tau_hat.tolist(),
            "bound_grad_inf": bound_grad_norm,
            "fd_agreement": agreement,
            "min_f_prime": min_f_prime,
            "bound_increases_under_nu_perturbation": probe_increases,
            "ridge_probe_bound_grad": float(ridge_grad),
            "iterations": int(result.nit),
        },
    )


# ---------------------------------------------------------------------------
# Sufficiency corollary: log-concavity of the bump in its centroid
# ---------------------------------------------------------------------------

def verify_log_concavity(tau: float, b: float, n_triples: int, seed: int) -> VerificationReport:
    """Midpoint concavity of nu -> log psi(b; nu, tau): the exponent is
    quadratic in nu, so the concavity gap (nu1 - nu2)^2 / (8 tau^2) is
    exactly nonnegative for every pair."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    rng = substream(seed, "log-concavity")
    nu1 = rng.uniform(-4.0, 4.0, size=n_triples)
    nu2 = rng.uniform(-4.0, 4.0, size=n_triples)

    def log_psi(nu):
        return -0.5 * ((b - nu) / tau) ** 2 - math.log(tau) - 0.5 * LOG_2PI

    gaps = log_psi(0.5 * (nu1 + nu2)) - 0.5 * (log_psi(nu1) + log_psi(nu2))
    worst = float(gaps.min())
    return _one_sided("log_concavity", lhs=worst, rhs=0.0, tolerance=1e-12,
                      n_triples=n_triples, tau=tau, b=b,
                      max_gap=float(gaps.max()))


# ---------------------------------------------------------------------------
# whole-suite runner
# ---------------------------------------------------------------------------

def _merge(check: str, cases: list[VerificationReport]) -> VerificationReport:
    def badness(r: VerificationReport) -> tuple[int, float]:
        ratio = abs(r.gap) / max(r.tolerance, 1e-300) if not r.one_sided else 0.0
        return (0 if r.passed else 1, ratio)

    worst = max(cases, key=badness)
    return VerificationReport(
        check=check, lhs=worst.lhs, rhs=worst.rhs, gap=worst.gap,
        tolerance=worst.tolerance, passed=all(c.passed for c in cases),
        one_sided=worst.one_sided, mc_std_error=worst.mc_std_error,
        details={"n_cases": len(cases), "cases": [c.to_record() for c in cases]},
    )


def run_all(seed: int, n_mc: int = 200_000) -> list[VerificationReport]:
    """One aggregate report per certified proposition; deterministic for a
    fixed seed and sized to finish in well under a minute on one core."""
    reports = []

    elbo_cases = [verify_elbo_identity(random_toy(seed + i), n_mc, seed + i) for i in range(10)]
    elbo_cases.append(verify_elbo_identity(exact_posterior_toy(seed), n_mc, seed + 100))
    reports.append(_merge("elbo_identity", elbo_cases))

    rng = substream(seed, "kl-chain-params")
    chain_cases = []
    for alpha in (0.0, 0.7, -0.7):
        chain_cases.append(verify_kl_chain(KlChainSpec(m_b=0.3, s_b=1.1, alpha=alpha,
                                                       c=-0.2, s_a=0.8)))
    for _ in range(7):
        spec = KlChainSpec(m_b=float(rng.uniform(-1, 1)), s_b=float(rng.uniform(0.6, 1.5)),
                           alpha=float(rng.uniform(-1, 1)), c=float(rng.uniform(-0.5, 0.5)),
                           s_a=float(rng.uniform(0.6, 1.5)))
        chain_cases.append(verify_kl_chain(spec))
    chain_cases.append(verify_kl_chain(KlChainSpec(0.3, 1.0, 0.7, 0.0, 0.9), prior_rho=0.5))
    reports.append(_merge("kl_chain", chain_cases))

    pair_cases = [
        verify_pairwise_marginal(0.4, 1.2, -0.3, 0.8, rho=0.0),
        verify_pairwise_marginal(0.4, 1.2, -0.3, 0.8, rho=0.5),
        verify_pairwise_marginal(0.0, 1.0, 0.5, 1.3, rho=-0.6),
    ]
    reports.append(_merge("pairwise_marginal", pair_cases))

    jrng = substream(seed, "jensen")
    mix = GaussianMixture1D(
        class_prior_estimate(jrng.integers(5, 40, size=3)),
        jrng.uniform(-2.0, 2.0, size=3),
        jrng.uniform(0.5, 1.5, size=3),
    )
    grid = np.linspace(-14.0, 14.0, 4001)
    q_vals = np.exp(-0.5 * ((grid - 0.4) / 1.2) ** 2)
    q = GridDensity(grid, q_vals).normalized()
    raw = jrng.uniform(0.05, 1.0, size=(100, 3))
    q_choices = raw / raw.sum(axis=1, keepdims=True)
    single = GaussianMixture1D([1.0], [0.2], [0.9])
    jensen_cases = [
        verify_jensen_bound(q, mix, q_choices),
        verify_jensen_bound(q, single, np.array([[1.0]])),
    ]
    reports.append(_merge("jensen_bound", jensen_cases))

    ce_cases = [
        verify_ce_bound_stationarity(TwoClassToy()),
        verify_ce_bound_stationarity(TwoClassToy(counts=(60, 40))),
        verify_ce_bound_stationarity(TwoClassToy(means=(0.0, 0.0), scales=(1.0, 1.0))),
    ]
    reports.append(_merge("ce_bound_stationarity", ce_cases))

    reports.append(verify_log_concavity(tau=1.0, b=0.0, n_triples=1000, seed=seed))
    return reports
