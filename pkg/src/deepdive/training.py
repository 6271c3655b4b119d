"""Interleaved optimization: per-label classifier passes alternate with
main-objective passes under mode-dependent freezing, so the marginal
dimensions are always fixed while the conditional dimensions learn.

Each mode owns its own Adam state (a shared state would mix moments
across disjoint trainable sets). One run is strictly sequential and fully
determined by (seed, config, dataset).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .autodiff import Adam, Tape, Tensor
from .data import WindowedDataset, WindowSet
from .losses import LossBreakdown, beta_tcvae_loss, classifier_loss, main_loss
from .metrics import RunResult, mig, rrse
from .model import DeepDive, LatentSpec, NetworkConfig
from .rng import substream

VARIANTS = ("deepdive", "conditional_only", "marginal_only", "beta_tcvae")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    lr_main: float = 1e-3
    lr_classifier: float = 1e-3
    s_b: float = 0.1
    seed: int = 0
    interleave: str = "per_batch"
    variant: str = "deepdive"
    beta: float = 5.0
    checkpoint_path: str = ""
    log_path: str = ""

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_main <= 0 or self.lr_classifier <= 0:
            raise ValueError("learning rates must be positive")
        if self.interleave not in ("per_batch", "per_epoch"):
            raise ValueError(f"unknown interleave granularity {self.interleave!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    def validate_spec(self, spec: LatentSpec) -> None:
        if self.variant in ("conditional_only", "beta_tcvae") and spec.n2 != 0:
            raise ValueError(f"variant {self.variant} requires n2 = 0, got n2 = {spec.n2}")
        if self.variant == "marginal_only" and spec.n1 != 0:
            raise ValueError(f"variant marginal_only requires n1 = 0, got n1 = {spec.n1}")
        if self.variant == "beta_tcvae" and self.batch_size < 2:
            raise ValueError("beta_tcvae needs batches of at least 2 samples")


@dataclass
class TrainResult:
    model: DeepDive
    log: list[dict]
    epoch_metrics: list[dict]
    run: RunResult
    aborted: bool = False
    abort_reason: str = ""


def freeze_mask(model: DeepDive, mode: str, label: int | None = None) -> frozenset[str]:
    """Names frozen for one sub-step.

    main: every RBF head and every encoder column feeding a marginal
    dimension. classifier(i): everything off the trunk -> b_i -> head_i
    path (other heads, the conditional heads, fusion and decoder).
    """
    names = set(model.params)
    if mode == "main":
        return frozenset(n for n in names
                         if n.startswith("rbf.") or n.startswith("encoder.head.b."))
    if mode == "classifier":
        if label is None or not 1 <= label <= model.spec.n2:
            raise ValueError(f"classifier mode needs a label in 1..{model.spec.n2}")
        keep_prefixes = ("encoder.trunk.", f"encoder.head.b.{label}.", f"rbf.{label}.")
        return frozenset(n for n in names if not n.startswith(keep_prefixes))
    raise ValueError(f"unknown mode {mode!r}")


def build_optimizers(model: DeepDive, config: TrainConfig) -> dict[str, Adam]:
    opts = {"main": Adam(lr=config.lr_main)}
    for i in range(1, model.spec.n2 + 1):
        opts[f"classifier_{i}"] = Adam(lr=config.lr_classifier)
    return opts


def _classifier_substep(model, x, labels, i, optimizers, rng) -> LossBreakdown:
    model.zero_grad()
    with Tape() as tape:
        out = model.forward(x, mode="classifier", label=i, rng=rng)
        loss, ce_value = classifier_loss(out.logits[i - 1], labels[:, i - 1])
        tape.backward(loss)
    optimizers[f"classifier_{i}"].step(model.params, frozen=freeze_mask(model, "classifier", i))
    model.project_constraints()
    ce = tuple(ce_value if j == i - 1 else 0.0 for j in range(model.spec.n2))
    return LossBreakdown(mse_x=0.0, mse_y=0.0, kl_a=0.0, ce=ce, tc=None, total=ce_value)


def _main_substep(model, x, y, labels, config, optimizers, rng) -> LossBreakdown:
    model.zero_grad()
    with Tape() as tape:
        out = model.forward(x, mode="main", rng=rng)
        if config.variant == "beta_tcvae":
            loss, breakdown = beta_tcvae_loss(x, y, out, beta=config.beta)
        else:
            loss, breakdown = main_loss(x, y, out, labels=labels if model.spec.n2 else None)
        tape.backward(loss)
    optimizers["main"].step(model.params, frozen=freeze_mask(model, "main"))
    model.project_constraints()
    return breakdown


def interleaved_step(model: DeepDive, x: Tensor, y: Tensor, labels: np.ndarray,
                     config: TrainConfig, optimizers: dict[str, Adam],
                     rng: np.random.Generator | None) -> list[tuple[str, LossBreakdown]]:
    """One round-robin pass over a batch: a classifier sub-step per label
    (CE_i, updating only the trunk, the b_i encoder head and head_i), then
    one main sub-step with every RBF head and marginal encoder column
    frozen. Returns (mode, breakdown) per sub-step; a conditional-only
    configuration degenerates to the single main sub-step."""
    steps: list[tuple[str, LossBreakdown]] = []
    for i in range(1, model.spec.n2 + 1):
        steps.append((f"classifier_{i}",
                      _classifier_substep(model, x, labels, i, optimizers, rng)))
    steps.append(("main", _main_substep(model, x, y, labels, config, optimizers, rng)))
    return steps


def evaluate(model: DeepDive, window_set: WindowSet, batch_size: int = 256) -> dict:
    """Deterministic metrics pass (no sampling noise): RRSE of the
    reconstruction and forecast heads over the whole split."""
    if len(window_set) == 0:
        return {"rrse_recon": float("nan"), "rrse_forecast": float("nan")}
    x_hat, y_hat = [], []
    for lo in range(0, len(window_set), batch_size):
        xs = Tensor(window_set.x[lo:lo + batch_size])
        out = model.forward(xs, mode="main", rng=None)
        x_hat.append(out.x_hat.data)
        y_hat.append(out.y_hat.data)
    return {
        "rrse_recon": rrse(np.concatenate(x_hat), window_set.x),
        "rrse_forecast": rrse(np.concatenate(y_hat), window_set.y),
    }


def latent_matrix(model: DeepDive, window_set: WindowSet) -> np.ndarray:
    """One scalar per logical latent dimension: channel sums for the
    conditional dims, classifier-weighted projections for the marginals."""
    code = model.encode(Tensor(window_set.x))
    cols = [code.mu_a.data[:, :, i].sum(axis=1) for i in range(model.spec.n1)]
    for i in range(1, model.spec.n2 + 1):
        w = model.params[f"rbf.{i}.w"].data
        cols.append(code.b.data[:, :, i - 1] @ w)
    return np.stack(cols, axis=1)


def train(config: TrainConfig, dataset: WindowedDataset,
          spec: LatentSpec, net_config: NetworkConfig) -> TrainResult:
    """Run the full schedule; returns the model, the per-sub-step log,
    per-epoch validation metrics and the test-split RunResult.

    A non-finite loss aborts the run; the checkpoint written after the
    last completed epoch is retained.
    """
    config.validate_spec(spec)
    if len(dataset.train) == 0:
        raise ValueError("train: empty training split")
    model = DeepDive(spec, net_config, substream(config.seed, "init"))
    optimizers = build_optimizers(model, config)
    shuffle_rng = substream(config.seed, "shuffle")
    noise_rng = substream(config.seed, "noise")
    log: list[dict] = []
    epoch_metrics: list[dict] = []
    aborted = False
    abort_reason = ""

    n = len(dataset.train)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        batches = [order[lo:lo + config.batch_size] for lo in range(0, n, config.batch_size)]

        def tensors(idx):
            return Tensor(dataset.train.x[idx]), Tensor(dataset.train.y[idx]), dataset.train.labels[idx]

        def record(batch_no: int, mode: str, breakdown: LossBreakdown) -> bool:
            log.append({"epoch": epoch, "batch": batch_no, "mode": mode,
                        **breakdown.to_record()})
            return bool(np.isfinite(breakdown.total))

        ok = True
        if config.interleave == "per_batch":
            for batch_no, idx in enumerate(batches):
                x, y, labels = tensors(idx)
                for mode, bd in interleaved_step(model, x, y, labels, config,
                                                 optimizers, noise_rng):
                    ok = ok and record(batch_no, mode, bd)
                if not ok:
                    break
        else:  # per_epoch: all classifier passes for each label, then all main passes
            for i in range(1, spec.n2 + 1):
                for batch_no, idx in enumerate(batches):
                    x, _, labels = tensors(idx)
                    bd = _classifier_substep(model, x, labels, i, optimizers, noise_rng)
                    ok = ok and record(batch_no, f"classifier_{i}", bd)
            if ok:
                for batch_no, idx in enumerate(batches):
                    x, y, labels = tensors(idx)
                    bd = _main_substep(model, x, y, labels, config, optimizers, noise_rng)
                    ok = ok and record(batch_no, "main", bd)

        if not ok:
            aborted = True
            abort_reason = f"non-finite loss in epoch {epoch}; last-good checkpoint kept"
            break
        val = evaluate(model, dataset.val)
        epoch_metrics.append({"epoch": epoch, **val})
        if config.checkpoint_path:
            model.save(config.checkpoint_path)

    test = evaluate(model, dataset.test)
    mig_score = None
    n_latents = spec.n1 + spec.n2
    if len(dataset.test) >= 10 and dataset.test.labels.shape[1] >= 1 and n_latents >= 2:
        try:
            mig_score = mig(latent_matrix(model, dataset.test), dataset.test.labels)
        except ValueError:
            mig_score = None
    run = RunResult(variant=config.variant, seed=config.seed,
                    rrse_recon=test["rrse_recon"], rrse_forecast=test["rrse_forecast"],
                    mig=mig_score, curves=epoch_metrics)
    if config.checkpoint_path and config.epochs == 0:
        model.save(config.checkpoint_path)
    if config.log_path:
        with open(config.log_path, "w") as fh:
            for record in log:
                fh.write(json.dumps(record) + "\n")
    return TrainResult(model=model, log=log, epoch_metrics=epoch_metrics, run=run,
                       aborted=aborted, abort_reason=abort_reason)
