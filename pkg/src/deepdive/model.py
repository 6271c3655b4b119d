"""The split-latent network: encoder, RBF classifier heads, cross-attention
fusion, and the dual reconstruction/forecast decoder.

All operations are batch-first: an input window batch has shape (N, l, L)
and every latent field carries the same leading N. Label indices are
1-based to match the data schema.

Parameter names follow a fixed scheme (documented in the README):
``encoder.trunk.{k}.weight|bias``, ``encoder.head.mu.*``,
``encoder.head.log_sigma.*``, ``encoder.head.b.{i}.*``,
``rbf.{i}.w|nu|tau|logit.weight|logit.bias``, ``fusion.f_a.*``,
``fusion.f_b.{i}.*``, ``fusion.attn.wq|wk|wv|wo``,
``decoder.summary.*``, ``decoder.recon.{k}.*``, ``decoder.forecast.{k}.*``.
The per-label encoder heads and per-label RBF banks exist so the training
schedule can freeze exactly the columns feeding one marginal dimension.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor

TAU_MIN = 1e-3
LOG_SIGMA_RANGE = (-10.0, 10.0)


@dataclass(frozen=True)
class LatentSpec:
    """Latent layout: l channels per dimension, n1 conditional dims,
    n2 marginal dims with class counts K (one entry per marginal dim)."""

    l: int
    n1: int
    n2: int
    K: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "K", tuple(int(k) for k in self.K))
        if self.l < 1:
            raise ValueError("l must be >= 1")
        if self.n1 < 0 or self.n2 < 0 or self.n1 + self.n2 < 1:
            raise ValueError("need n1 >= 0, n2 >= 0 and n1 + n2 >= 1")
        if len(self.K) != self.n2:
            raise ValueError(f"K must list {self.n2} class counts, got {len(self.K)}")
        if any(k < 2 for k in self.K):
            raise ValueError("every class count K_i must be >= 2")


@dataclass
class NetworkConfig:
    """Widths and policy knobs. Defaults are sized for desk-scale runs;
    everything is configurable through the flat config file."""

    encoder_widths: tuple[int, ...] = (48,)
    decoder_widths: tuple[int, ...] = (48,)
    activation: str = "relu"
    L: int = 16
    H: int = 4
    s_b: float = 0.1
    h: int = 16
    heads: int = 1

    def __post_init__(self):
        self.encoder_widths = tuple(int(w) for w in self.encoder_widths)
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        if any(w <= 0 for w in self.encoder_widths + self.decoder_widths):
            raise ValueError("layer widths must be positive")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.L < 1 or self.H < 1:
            raise ValueError("L and H must be >= 1")
        if self.h < 1 or self.heads < 1 or self.h % self.heads != 0:
            raise ValueError("model width h must be a positive multiple of the head count")


@dataclass
class LatentCode:
    """Split code for a batch: conditional Gaussian parameters and the
    marginal embeddings, plus the per-mode conditional sample."""

    mu_a: Tensor        # (N, l, n1)
    log_sigma_a: Tensor  # (N, l, n1)
    b: Tensor            # (N, l, n2)
    a_sample: Tensor     # (N, l, n1); equals mu_a exactly when sampling is off


@dataclass
class ForwardResult:
    x_hat: Tensor
    y_hat: Tensor
    code: LatentCode
    psi: list[Tensor]     # per marginal dim: (N, K_i)
    logits: list[Tensor]  # per marginal dim: (N, K_i)
    probs: list[Tensor]   # per marginal dim: (N, K_i)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / max(fan_in + fan_out, 1))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def reparameterize(mu: Tensor, log_sigma: Tensor, noise_on: bool,
                   rng: np.random.Generator | None = None) -> Tensor:
    """a = mu + exp(log_sigma) * eps with external eps, so gradients flow
    to mu and log_sigma only. With noise off, returns mu itself."""
    if mu.shape != log_sigma.shape:
        raise ValueError(f"reparameterize: shape mismatch {mu.shape} vs {log_sigma.shape}")
    if not noise_on:
        return mu
    if rng is None:
        raise ValueError("reparameterize: noise_on requires an rng")
    eps = Tensor(rng.standard_normal(mu.shape))
    return ad.add(mu, ad.mul(ad.exp(log_sigma), eps))


def attention(q: Tensor, k: Tensor, v: Tensor, heads: int = 1,
              w_out: Tensor | None = None) -> Tensor:
    """Scaled dot-product attention over (..., tokens, h) stacks.

    Per head: softmax(Q K^T / sqrt(h/heads)) V on width submatrices;
    head outputs are concatenated and, if `w_out` is given, mixed by it.
    """
    width = q.shape[-1]
    if k.shape[-1] != width or v.shape[-1] != width:
        raise ValueError(f"attention: width mismatch q={q.shape} k={k.shape} v={v.shape}")
    if width % heads != 0:
        raise ValueError(f"attention: width {width} not divisible by {heads} heads")
    dh = width // heads
    outs = []
    for i in range(heads):
        qs = ad.slice_axis(q, q.ndim - 1, i * dh, (i + 1) * dh)
        ks = ad.slice_axis(k, k.ndim - 1, i * dh, (i + 1) * dh)
        vs = ad.slice_axis(v, v.ndim - 1, i * dh, (i + 1) * dh)
        scores = ad.mul(ad.matmul(qs, ad.transpose(ks)), 1.0 / math.sqrt(dh))
        outs.append(ad.matmul(ad.softmax(scores), vs))
    out = outs[0] if heads == 1 else ad.concat(outs, axis=q.ndim - 1)
    if w_out is not None:
        out = ad.matmul(out, w_out)
    return out


class DeepDive:
    """Split-latent autoencoder with a forecasting head.

    Owns an ordered name -> Parameter map; forward passes are pure given
    the parameters and the supplied rng, so a fixed seed reproduces runs
    bit-for-bit.
    """

    def __init__(self, spec: LatentSpec, config: NetworkConfig,
                 rng: np.random.Generator) -> None:
        self.spec = spec
        self.config = config
        self.params: dict[str, Parameter] = {}
        self._act = ad.relu if config.activation == "relu" else ad.tanh
        self._build(rng)

    # -- construction -------------------------------------------------

    def _add(self, name: str, data: np.ndarray) -> Parameter:
        p = Parameter(Tensor(data))
        self.params[name] = p
        return p

    def _linear(self, name: str, rng, fan_in: int, fan_out: int) -> None:
        self._add(f"{name}.weight", _glorot(rng, fan_in, fan_out))
        self._add(f"{name}.bias", np.zeros(fan_out))

    def _build(self, rng: np.random.Generator) -> None:
        spec, cfg = self.spec, self.config
        in_dim = spec.l * cfg.L
        for k, width in enumerate(cfg.encoder_widths):
            self._linear(f"encoder.trunk.{k}", rng, in_dim, width)
            in_dim = width
        trunk_out = in_dim
        if spec.n1 > 0:
            self._linear("encoder.head.mu", rng, trunk_out, spec.l * spec.n1)
            self._linear("encoder.head.log_sigma", rng, trunk_out, spec.l * spec.n1)
        for i in range(1, spec.n2 + 1):
            self._linear(f"encoder.head.b.{i}", rng, trunk_out, spec.l)

        for i, k_i in enumerate(spec.K, start=1):
            self._add(f"rbf.{i}.w", np.full(spec.l, 1.0 / spec.l))
            self._add(f"rbf.{i}.nu", np.linspace(-2.0, 2.0, k_i))
            self._add(f"rbf.{i}.tau", np.ones(k_i))
            self._linear(f"rbf.{i}.logit", rng, k_i, k_i)

        if spec.n1 > 0:
            self._linear("fusion.f_a", rng, spec.l * spec.n1, cfg.h)
        for i, k_i in enumerate(spec.K, start=1):
            self._linear(f"fusion.f_b.{i}", rng, k_i, cfg.h)
        if spec.n1 > 0:
            for name in ("wq", "wk", "wv", "wo"):
                self._add(f"fusion.attn.{name}", _glorot(rng, cfg.h, cfg.h))

        self.n_tokens = (1 if spec.n1 > 0 else 0) + spec.n2
        self._linear("decoder.summary", rng, spec.l * cfg.L, spec.l)
        in_dim = self.n_tokens * cfg.h
        for k, width in enumerate(cfg.decoder_widths):
            self._linear(f"decoder.recon.{k}", rng, in_dim, width)
            in_dim = width
        self._linear("decoder.recon.out", rng, in_dim, spec.l * cfg.L)
        in_dim = self.n_tokens * cfg.h + spec.l
        for k, width in enumerate(cfg.decoder_widths):
            self._linear(f"decoder.forecast.{k}", rng, in_dim, width)
            in_dim = width
        self._linear("decoder.forecast.out", rng, in_dim, spec.l * cfg.H)

    # -- parameter plumbing -------------------------------------------

    def _apply_linear(self, name: str, x: Tensor) -> Tensor:
        w = self.params[f"{name}.weight"].tensor
        b = self.params[f"{name}.bias"].tensor
        return ad.add(ad.matmul(x, w), b)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.tensor.grad = None

    def project_constraints(self) -> None:
        """Clamp RBF scales above TAU_MIN after an optimizer step so
        densities stay nondegenerate without killing gradients."""
        for i in range(1, self.spec.n2 + 1):
            tau = self.params[f"rbf.{i}.tau"].tensor
            np.maximum(tau.data, TAU_MIN, out=tau.data)

    # -- forward pieces ------------------------------------------------

    def encode(self, x: Tensor) -> LatentCode:
        """Map a batch of lookback windows (N, l, L) to the split code."""
        spec, cfg = self.spec, self.config
        if x.ndim != 3 or x.shape[1:] != (spec.l, cfg.L):
            raise ValueError(f"encode: expected (N, {spec.l}, {cfg.L}), got {x.shape}")
        if not np.all(np.isfinite(x.data)):
            raise FloatingPointError("encode: non-finite input")
        n = x.shape[0]
        h = ad.reshape(x, (n, spec.l * cfg.L))
        for k in range(len(cfg.encoder_widths)):
            h = self._act(self._apply_linear(f"encoder.trunk.{k}", h))
        if spec.n1 > 0:
            mu = ad.reshape(self._apply_linear("encoder.head.mu", h), (n, spec.l, spec.n1))
            log_sigma = ad.clip(
                ad.reshape(self._apply_linear("encoder.head.log_sigma", h), (n, spec.l, spec.n1)),
                *LOG_SIGMA_RANGE,
            )
        else:
            mu = Tensor(np.zeros((n, spec.l, 0)))
            log_sigma = Tensor(np.zeros((n, spec.l, 0)))
        if spec.n2 > 0:
            cols = [
                ad.reshape(self._apply_linear(f"encoder.head.b.{i}", h), (n, spec.l, 1))
                for i in range(1, spec.n2 + 1)
            ]
            b = cols[0] if spec.n2 == 1 else ad.concat(cols, axis=2)
        else:
            b = Tensor(np.zeros((n, spec.l, 0)))
        return LatentCode(mu_a=mu, log_sigma_a=log_sigma, b=b, a_sample=mu)

    def classify(self, b_i: Tensor, label: int) -> tuple[Tensor, Tensor, Tensor]:
        """One marginal dimension (N, l) -> (psi, logits, probs), each (N, K_i).

        Channel projection w_i collapses the l channels to a scalar, the
        RBF bank turns the scalar into K_i positive activations, and the
        affine logit map plus softmax yields class probabilities.
        """
        w = self.params[f"rbf.{label}.w"].tensor
        nu = self.params[f"rbf.{label}.nu"].tensor
        tau = self.params[f"rbf.{label}.tau"].tensor
        if np.any(tau.data <= 0):
            raise ValueError(f"rbf.{label}.tau must be positive")
        s = ad.tensor_sum(ad.mul(b_i, w), axis=1, keepdims=True)  # (N, 1)
        z = ad.div(ad.sub(s, nu), tau)                            # (N, K_i)
        psi = ad.div(ad.exp(ad.mul(ad.square(z), -0.5)),
                     ad.mul(tau, math.sqrt(2.0 * math.pi)))
        logits = self._apply_linear(f"rbf.{label}.logit", psi)
        return psi, logits, ad.softmax(logits)

    def fuse(self, code: LatentCode, psi_all: Sequence[Tensor]) -> Tensor:
        """Cross-attention fusion: conditional code and RBF outputs query
        the conditional code. With no conditional dims there is nothing to
        attend over, so the projected RBF tokens pass through unchanged."""
        spec, cfg = self.spec, self.config
        n = code.b.shape[0] if spec.n2 > 0 else code.mu_a.shape[0]
        tokens: list[Tensor] = []
        if spec.n1 > 0:
            a_flat = ad.reshape(code.a_sample, (n, spec.l * spec.n1))
            tokens.append(ad.reshape(self._apply_linear("fusion.f_a", a_flat), (n, 1, cfg.h)))
        for i, psi in enumerate(psi_all, start=1):
            tokens.append(ad.reshape(self._apply_linear(f"fusion.f_b.{i}", psi), (n, 1, cfg.h)))
        if spec.n1 == 0:
            return tokens[0] if len(tokens) == 1 else ad.concat(tokens, axis=1)
        q = tokens[0] if len(tokens) == 1 else ad.concat(tokens, axis=1)
        kv = tokens[0]
        qp = ad.matmul(q, self.params["fusion.attn.wq"].tensor)
        kp = ad.matmul(kv, self.params["fusion.attn.wk"].tensor)
        vp = ad.matmul(kv, self.params["fusion.attn.wv"].tensor)
        return attention(qp, kp, vp, heads=cfg.heads,
                         w_out=self.params["fusion.attn.wo"].tensor)

    def decode(self, tokens: Tensor, x_summary: Tensor) -> tuple[Tensor, Tensor]:
        """Fused tokens (N, T, h) -> reconstruction (N, l, L) and forecast
        (N, l, H); the forecast head sees the linear summary of x, which
        realizes conditioning of the forecast on the lookback window."""
        spec, cfg = self.spec, self.config
        n = tokens.shape[0]
        flat = ad.reshape(tokens, (n, tokens.shape[1] * cfg.h))
        h = flat
        for k in range(len(cfg.decoder_widths)):
            h = self._act(self._apply_linear(f"decoder.recon.{k}", h))
        x_hat = ad.reshape(self._apply_linear("decoder.recon.out", h), (n, spec.l, cfg.L))
        h = ad.concat([flat, x_summary], axis=1)
        for k in range(len(cfg.decoder_widths)):
            h = self._act(self._apply_linear(f"decoder.forecast.{k}", h))
        y_hat = ad.reshape(self._apply_linear("decoder.forecast.out", h), (n, spec.l, cfg.H))
        return x_hat, y_hat

    def forward(self, x: Tensor, mode: str = "main", label: int | None = None,
                rng: np.random.Generator | None = None) -> ForwardResult:
        """Full pass under the mode-dependent noise policy.

        main: the conditional code is sampled (when an rng is given) and
        the marginal code is used exactly as encoded. classifier(i): the
        conditional code collapses to its mean and only marginal dimension
        i receives additive noise of scale s_b. With rng=None both modes
        are fully deterministic.
        """
        spec, cfg = self.spec, self.config
        if mode not in ("main", "classifier"):
            raise ValueError(f"forward: unknown mode {mode!r}")
        if mode == "classifier":
            if label is None or not 1 <= label <= spec.n2:
                raise ValueError(f"forward: classifier mode needs a label in 1..{spec.n2}")
        code = self.encode(x)
        if mode == "main":
            a = reparameterize(code.mu_a, code.log_sigma_a, noise_on=rng is not None, rng=rng)
            b_used = code.b
        else:
            a = code.mu_a
            b_used = code.b
            if rng is not None and cfg.s_b != 0.0:
                noise = np.zeros(code.b.shape)
                noise[:, :, label - 1] = cfg.s_b * rng.standard_normal(code.b.shape[:2])
                b_used = ad.add(code.b, Tensor(noise))
        code = LatentCode(code.mu_a, code.log_sigma_a, b_used, a)

        psi_all, logits_all, probs_all = [], [], []
        for i in range(1, spec.n2 + 1):
            b_i = ad.reshape(ad.slice_axis(b_used, 2, i - 1, i), (x.shape[0], spec.l))
            psi, logits, probs = self.classify(b_i, i)
            psi_all.append(psi)
            logits_all.append(logits)
            probs_all.append(probs)

        tokens = self.fuse(code, psi_all)
        x_summary = self._apply_linear("decoder.summary",
                                       ad.reshape(x, (x.shape[0], spec.l * cfg.L)))
        x_hat, y_hat = self.decode(tokens, x_summary)
        return ForwardResult(x_hat, y_hat, code, psi_all, logits_all, probs_all)

    # -- persistence ---------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"checkpoint parameter set mismatch: {sorted(missing)}")
        for name, value in state.items():
            arr = np.asarray(value, dtype=np.float64)
            if arr.shape != self.params[name].data.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}")
            self.params[name].tensor.data = arr.copy()

    def save(self, path) -> None:
        payload = {
            "latent_spec": {"l": self.spec.l, "n1": self.spec.n1,
                            "n2": self.spec.n2, "K": list(self.spec.K)},
            "network_config": {**asdict(self.config),
                               "encoder_widths": list(self.config.encoder_widths),
                               "decoder_widths": list(self.config.decoder_widths)},
            "params": {name: {"shape": list(p.data.shape),
                              "data": p.data.reshape(-1).tolist()}
                       for name, p in self.params.items()},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "DeepDive":
        with open(path) as fh:
            payload = json.load(fh)
        spec = LatentSpec(l=payload["latent_spec"]["l"], n1=payload["latent_spec"]["n1"],
                          n2=payload["latent_spec"]["n2"], K=tuple(payload["latent_spec"]["K"]))
        raw = dict(payload["network_config"])
        raw["encoder_widths"] = tuple(raw["encoder_widths"])
        raw["decoder_widths"] = tuple(raw["decoder_widths"])
        config = NetworkConfig(**raw)
        model = cls(spec, config, np.random.default_rng(0))
        state = {name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
                 for name, entry in payload["params"].items()}
        model.load_state_dict(state)
        return model
