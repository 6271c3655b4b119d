"""Loss terms: the main reconstruction/forecast/KL objective, per-label
cross entropy, the Jensen-bound estimator, and the total-correlation
baseline objective.

Tensor-valued functions return the differentiable scalar; `main_loss` and
`beta_tcvae_loss` additionally return a float `LossBreakdown` for logging.
Cross entropy is always computed from logits through a shifted
log-sum-exp, never from normalized probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .distributions import GaussianMixture1D
from .model import ForwardResult, LatentCode

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossBreakdown:
    """Named scalar components of one optimization sub-step."""

    mse_x: float
    mse_y: float
    kl_a: float
    ce: tuple[float, ...]
    tc: float | None
    total: float

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["ce"] = list(self.ce)
        return rec


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    return ad.mean(ad.square(ad.sub(pred, target)))


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross entropy -log softmax(logits)[j] over the batch.

    `labels` are 1-based class indices, shape (N,). Stability comes from
    the shifted log-sum-exp; probabilities are never normalized first.
    """
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"ce_loss: expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 1) or np.any(labels > k):
        raise IndexError(f"ce_loss: labels must lie in 1..{k}")
    shift = logits.data.max(axis=-1, keepdims=True)
    lse = ad.add(ad.log(ad.tensor_sum(ad.exp(ad.sub(logits, shift)), axis=-1)),
                 shift[:, 0])
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels - 1] = 1.0
    picked = ad.tensor_sum(ad.mul(logits, onehot), axis=-1)
    return ad.mean(ad.sub(lse, picked))


def kl_conditional(code: LatentCode) -> Tensor:
    """Analytic KL of the conditional code to N(0, I): per-sample sum over
    the l*n1 coordinates of -1/2 (1 + 2 log s - mu^2 - s^2), batch-meaned.
    An empty conditional block contributes exactly zero."""
    if code.mu_a.data.size == 0:
        return Tensor(0.0)
    mu, log_sigma = code.mu_a, code.log_sigma_a
    var = ad.exp(ad.mul(log_sigma, 2.0))
    inner = ad.add(ad.sub(ad.add(ad.mul(log_sigma, 2.0), 1.0), ad.square(mu)), ad.negate(var))
    per_sample = ad.tensor_sum(ad.mul(inner, -0.5), axis=(1, 2))
    return ad.mean(per_sample)


def _ce_report(logits_data: np.ndarray, labels: np.ndarray) -> float:
    shift = logits_data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(logits_data - shift).sum(axis=-1)) + shift[:, 0]
    picked = logits_data[np.arange(len(labels)), labels - 1]
    return float(np.mean(lse - picked))


def main_loss(x: Tensor, y: Tensor, out: ForwardResult,
              labels: np.ndarray | None = None) -> tuple[Tensor, LossBreakdown]:
    """Main-mode objective: mse_x + mse_y + kl_a.

    Cross-entropy values are reported in the breakdown when labels are
    given but are not part of the total.
    """
    mse_x = mse_loss(out.x_hat, x)
    mse_y = mse_loss(out.y_hat, y)
    kl_a = kl_conditional(out.code)
    total = ad.add(ad.add(mse_x, mse_y), kl_a)
    ce: tuple[float, ...] = ()
    if labels is not None and out.logits:
        labels = np.atleast_2d(np.asarray(labels, dtype=np.int64))
        ce = tuple(_ce_report(lg.data, labels[:, i]) for i, lg in enumerate(out.logits))
    breakdown = LossBreakdown(mse_x=float(mse_x.data), mse_y=float(mse_y.data),
                              kl_a=float(kl_a.data), ce=ce, tc=None,
                              total=float(total.data))
    return total, breakdown


def classifier_loss(logits: Tensor, labels) -> tuple[Tensor, float]:
    """Per-label objective: delegates to `ce_loss`."""
    loss = ce_loss(logits, labels)
    return loss, float(loss.data)


def kl_bound_rhs(b_samples, q_weights, mix: GaussianMixture1D) -> float:
    """Monte-Carlo estimate of the Jensen upper bound on the marginal KL
    cross term: mean over samples of sum_k Q_k (log Q_k - log p(b, k)).

    `q_weights` is either a single probability vector over K (the
    constant-Q reading) or one vector per sample.
    """
    b = np.atleast_1d(np.asarray(b_samples, dtype=np.float64))
    q = np.asarray(q_weights, dtype=np.float64)
    if q.ndim == 1:
        q = np.broadcast_to(q, (b.size, q.size))
    if q.shape != (b.size, mix.n_components):
        raise ValueError(f"kl_bound_rhs: Q shape {q.shape} does not match "
                         f"{b.size} samples x {mix.n_components} components")
    if np.any(q <= 0) or not np.allclose(q.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("kl_bound_rhs: each Q must be positive and sum to 1")
    log_joint = mix.log_joint(b)
    per_sample = (q * (np.log(q) - log_joint)).sum(axis=1)
    return float(per_sample.mean())


_logsumexp = ad.logsumexp


def _gaussian_log_density(z: Tensor, mu: Tensor, log_sigma: Tensor) -> Tensor:
    zc = ad.mul(ad.sub(z, mu), ad.exp(ad.negate(log_sigma)))
    return ad.mul(ad.add(ad.add(ad.square(zc), ad.mul(log_sigma, 2.0)), LOG_2PI), -0.5)


def beta_tcvae_terms(mu: Tensor, log_sigma: Tensor, z: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    """Minibatch-weighted estimates of (index-code MI, total correlation,
    dimension-wise KL) for a batch of diagonal-Gaussian codes.

    log q(z) and the per-dimension marginals are estimated by a
    log-sum-exp over the batch minus log N; the normalization cancels in
    the telescoped MI + TC + dimKL sum, which therefore matches the
    single-sample estimate of the full KL.
    """
    n, d = mu.shape
    if n < 2:
        raise ValueError("beta_tcvae_terms: batch must hold at least 2 samples")
    log_qz_cond = ad.tensor_sum(_gaussian_log_density(z, mu, log_sigma), axis=1)  # (N,)
    zs = ad.reshape(z, (n, 1, d))
    mus = ad.reshape(mu, (1, n, d))
    lss = ad.reshape(log_sigma, (1, n, d))
    pairwise = _gaussian_log_density(zs, mus, lss)                     # (N, N, D)
    log_qz = ad.sub(_logsumexp(ad.tensor_sum(pairwise, axis=2), axis=1), math.log(n))
    log_marginals = ad.sub(_logsumexp(pairwise, axis=1), math.log(n))  # (N, D)
    log_prod = ad.tensor_sum(log_marginals, axis=1)                    # (N,)
    log_prior = ad.tensor_sum(ad.mul(ad.add(ad.square(z), LOG_2PI), -0.5), axis=1)
    mi = ad.mean(ad.sub(log_qz_cond, log_qz))
    tc = ad.mean(ad.sub(log_qz, log_prod))
    dim_kl = ad.mean(ad.sub(log_prod, log_prior))
    return mi, tc, dim_kl


def beta_tcvae_loss(x: Tensor, y: Tensor, out: ForwardResult,
                    beta: float) -> tuple[Tensor, LossBreakdown]:
    """Baseline objective mse_x + mse_y + MI + beta*TC + dimKL for the
    conditional-only configuration (no marginal dimensions)."""
    if out.code.b.data.size != 0:
        raise ValueError("beta_tcvae_loss: requires a configuration with n2 = 0")
    n = out.code.mu_a.shape[0]
    d = out.code.mu_a.shape[1] * out.code.mu_a.shape[2]
    mu = ad.reshape(out.code.mu_a, (n, d))
    log_sigma = ad.reshape(out.code.log_sigma_a, (n, d))
    z = ad.reshape(out.code.a_sample, (n, d))
    mi, tc, dim_kl = beta_tcvae_terms(mu, log_sigma, z)
    mse_x = mse_loss(out.x_hat, x)
    mse_y = mse_loss(out.y_hat, y)
    reg = ad.add(ad.add(mi, ad.mul(tc, beta)), dim_kl)
    total = ad.add(ad.add(mse_x, mse_y), reg)
    breakdown = LossBreakdown(mse_x=float(mse_x.data), mse_y=float(mse_y.data),
                              kl_a=float(mi.data) + float(tc.data) + float(dim_kl.data),
                              ce=(), tc=float(tc.data), total=float(total.data))
    return total, breakdown
