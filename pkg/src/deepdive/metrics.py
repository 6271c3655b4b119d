"""Evaluation metrics and multi-run aggregation.

RRSE normalizes prediction error by the error of the target-mean
predictor; MIG measures disentanglement as the normalized gap between the
two largest latent-factor mutual informations. Both operate on plain
numpy arrays in normalized units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class RunResult:
    variant: str
    seed: int
    rrse_recon: float
    rrse_forecast: float
    mig: float | None = None
    curves: list[dict] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"variant": self.variant, "seed": self.seed,
                "rrse_recon": self.rrse_recon, "rrse_forecast": self.rrse_forecast,
                "mig": self.mig}


def rrse(pred, target) -> float:
    """Root relative squared error over all elements:
    sqrt(sum (pred-target)^2 / sum (target - mean(target))^2)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"rrse: shape mismatch {pred.shape} vs {target.shape}")
    denom = float(np.sum((target - target.mean()) ** 2))
    if denom <= 1e-300:
        raise ValueError("rrse: target is constant, relative error denominator degenerate")
    return float(math.sqrt(np.sum((pred - target) ** 2) / denom))


def _equal_frequency_bins(values: np.ndarray, bins: int) -> np.ndarray:
    edges = np.quantile(values, np.linspace(0.0, 1.0, bins + 1)[1:-1])
    return np.searchsorted(edges, values, side="right")


def discrete_mutual_information(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in MI (nats) between two integer-coded variables."""
    a_vals, a_idx = np.unique(a, return_inverse=True)
    b_vals, b_idx = np.unique(b, return_inverse=True)
    joint = np.zeros((a_vals.size, b_vals.size))
    np.add.at(joint, (a_idx, b_idx), 1.0)
    joint /= joint.sum()
    pa = joint.sum(axis=1, keepdims=True)
    pb = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    return float(np.sum(joint[mask] * np.log(joint[mask] / (pa @ pb)[mask])))


def discrete_entropy(v: np.ndarray) -> float:
    _, counts = np.unique(v, return_counts=True)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mig(latents, factors, bins: int = 20) -> float:
    """Mutual information gap over ground-truth factors.

    Latent dimensions are discretized into `bins` equal-frequency bins;
    for each factor the gap between its two largest latent MIs is
    normalized by the factor entropy, averaged and clamped to [0, 1].
    """
    z = np.asarray(latents, dtype=np.float64)
    v = np.asarray(factors)
    if z.ndim != 2 or v.ndim != 2 or z.shape[0] != v.shape[0]:
        raise ValueError("mig: latents (N, D) and factors (N, n_factors) must align")
    n, d = z.shape
    if n < 2 or d < 1:
        raise ValueError("mig: need at least 2 samples and 1 latent dimension")
    binned = np.stack([_equal_frequency_bins(z[:, j], bins) for j in range(d)], axis=1)
    gaps = []
    for k in range(v.shape[1]):
        if np.unique(v[:, k]).size < 2:
            raise ValueError(f"mig: factor {k + 1} has a single observed class")
        mi = np.array([discrete_mutual_information(binned[:, j], v[:, k]) for j in range(d)])
        order = np.sort(mi)[::-1]
        top = order[0]
        second = order[1] if d > 1 else 0.0
        gaps.append((top - second) / discrete_entropy(v[:, k]))
    return float(np.clip(np.mean(gaps), 0.0, 1.0))


def aggregate(results: list[RunResult]) -> dict:
    """Mean and population std per metric per variant.

    Raises on empty input; a variant with a single run reports its mean
    and a null std.
    """
    if not results:
        raise ValueError("aggregate: no results")
    by_variant: dict[str, list[RunResult]] = {}
    for r in results:
        by_variant.setdefault(r.variant, []).append(r)
    table: dict[str, dict] = {}
    for variant in sorted(by_variant):
        runs = by_variant[variant]
        entry: dict = {"n_runs": len(runs)}
        for metric in ("rrse_recon", "rrse_forecast", "mig"):
            values = sorted(getattr(r, metric) for r in runs if getattr(r, metric) is not None)
            if not values:
                entry[metric] = {"mean": None, "std": None}
                continue
            mean = float(np.mean(values))
            std = float(np.std(values)) if len(values) >= 2 else None
            entry[metric] = {"mean": mean, "std": std}
        table[variant] = entry
    return table


def format_aggregate(table: dict) -> str:
    """Aligned text rendering of an `aggregate` table."""
    lines = [f"{'variant':<18}{'recon RRSE':>14}{'std':>10}{'forecast RRSE':>16}{'std':>10}{'MIG':>10}"]
    for variant, entry in table.items():
        def cell(metric, key, width, fmt="{:.4f}"):
            value = entry[metric][key]
            return ("-" if value is None else fmt.format(value)).rjust(width)
        lines.append(
            f"{variant:<18}" + cell("rrse_recon", "mean", 14) + cell("rrse_recon", "std", 10)
            + cell("rrse_forecast", "mean", 16) + cell("rrse_forecast", "std", 10)
            + cell("mig", "mean", 10)
        )
    return "\n".join(lines)


def latent_table(model, window_set) -> tuple[list[str], np.ndarray]:
    """Scatter-plot export: per sample the channel-summed conditional
    aggregate, the classifier-weighted projection of each marginal
    dimension, and the true labels.

    Columns: ``y_agg, x_1..x_{n2}, label_1..label_{n2}``.
    """
    from .autodiff import Tensor

    spec = model.spec
    code = model.encode(Tensor(window_set.x))
    y_agg = code.mu_a.data.sum(axis=(1, 2)) if spec.n1 > 0 else np.zeros(len(window_set))
    cols = [y_agg]
    for i in range(1, spec.n2 + 1):
        w = model.params[f"rbf.{i}.w"].data
        cols.append(code.b.data[:, :, i - 1] @ w)
    for i in range(spec.n2):
        cols.append(window_set.labels[:, i].astype(np.float64))
    header = (["y_agg"] + [f"x_{i}" for i in range(1, spec.n2 + 1)]
              + [f"label_{i}" for i in range(1, spec.n2 + 1)])
    return header, np.stack(cols, axis=1)


def export_latent(model, window_set, path) -> None:
    header, table = latent_table(model, window_set)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        n2 = model.spec.n2
        for row in table:
            cells = [repr(float(v)) for v in row[:1 + n2]]
            cells += [str(int(v)) for v in row[1 + n2:]]
            fh.write(",".join(cells) + "\n")


def write_metrics_json(results: list[RunResult], path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_record() for r in results], fh, indent=2)
