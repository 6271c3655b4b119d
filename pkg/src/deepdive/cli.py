"""Operator surface: data generation, training, evaluation, certification
and latent export, driven by a flat key = value config file.

Exit codes: 0 success, 1 check or run failure, 2 usage error. All outputs
land under --out with fixed names: data.csv, checkpoint.bin,
trainlog.jsonl, metrics.json, verify/*.json, latent.csv.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import (
    WindowSpec,
    gen_electricity_like,
    gen_gait_like,
    prepare,
    read_frame_csv,
    write_frame_csv,
)
from .metrics import RunResult, export_latent, rrse, write_metrics_json, mig
from .model import DeepDive, LatentSpec, NetworkConfig
from .training import TrainConfig, evaluate, latent_matrix, train
from .verification import run_all


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration (a usage error)."""


def _parse_int_tuple(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip() != "")


def _parse_float_tuple(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip() != "")


# key -> (parser, [(target, field)]); shared keys fan out to several types
_KEY_MAP: dict = {
    "epochs": (int, [("train", "epochs")]),
    "batch_size": (int, [("train", "batch_size")]),
    "lr_main": (float, [("train", "lr_main")]),
    "lr_classifier": (float, [("train", "lr_classifier")]),
    "seed": (int, [("train", "seed")]),
    "interleave": (str, [("train", "interleave")]),
    "variant": (str, [("train", "variant")]),
    "beta": (float, [("train", "beta")]),
    "checkpoint_path": (str, [("train", "checkpoint_path")]),
    "log_path": (str, [("train", "log_path")]),
    "s_b": (float, [("train", "s_b"), ("net", "s_b")]),
    "encoder_widths": (_parse_int_tuple, [("net", "encoder_widths")]),
    "decoder_widths": (_parse_int_tuple, [("net", "decoder_widths")]),
    "activation": (str, [("net", "activation")]),
    "h": (int, [("net", "h")]),
    "heads": (int, [("net", "heads")]),
    "L": (int, [("net", "L"), ("window", "L")]),
    "H": (int, [("net", "H"), ("window", "H")]),
    "l": (int, [("latent", "l")]),
    "n1": (int, [("latent", "n1")]),
    "n2": (int, [("latent", "n2")]),
    "K": (_parse_int_tuple, [("latent", "K")]),
    "gap": (int, [("window", "gap")]),
    "stride": (int, [("window", "stride")]),
    "ratios": (_parse_float_tuple, [("window", "ratios")]),
}

_LATENT_DEFAULTS = {"l": 4, "n1": 4, "n2": 0, "K": ()}


def load_config(path) -> tuple[TrainConfig, NetworkConfig, LatentSpec, WindowSpec]:
    """Parse a flat `key = value` file (# comments, blank lines allowed).

    Unknown keys and malformed lines raise ConfigError with the line
    number; missing keys fall back to the documented defaults; the four
    config objects are cross-validated before being returned.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, dict[str, object]] = {"train": {}, "net": {}, "latent": {}, "window": {}}
    for lineno, raw_line in enumerate(path.read_text().splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = (part.strip() for part in line.partition("="))
        if key not in _KEY_MAP:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        parser, targets = _KEY_MAP[key]
        try:
            value = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        for target, field_name in targets:
            values[target][field_name] = value

    latent_kwargs = {**_LATENT_DEFAULTS, **values["latent"]}
    window_kwargs = dict(values["window"])
    net_kwargs = dict(values["net"])
    window_kwargs.setdefault("L", NetworkConfig().L)
    window_kwargs.setdefault("H", NetworkConfig().H)
    try:
        train_config = TrainConfig(**values["train"])
        net_config = NetworkConfig(**net_kwargs)
        latent_spec = LatentSpec(**latent_kwargs)
        window_spec = WindowSpec(**window_kwargs)
        train_config.validate_spec(latent_spec)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if net_config.L != window_spec.L or net_config.H != window_spec.H:
        raise ConfigError(f"{path}: network and window L/H disagree")
    return train_config, net_config, latent_spec, window_spec


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepdive",
                                     description="train, evaluate and certify the "
                                                 "disentangled forecasting encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    p.add_argument("--kind", choices=("electricity", "gait"), required=True)
    p.add_argument("--l", type=int, required=True, help="number of channels")
    p.add_argument("--t", type=int, required=True, help="series length")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--year-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model from a config and a data CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the numerical certification suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-mc", type=int, default=200_000)
    p.add_argument("--out", required=True)

    p = sub.add_parser("export-latent", help="write the latent scatter table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    return parser


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return p


def _load_dataset(args, window_spec: WindowSpec, latent_spec: LatentSpec):
    frame = read_frame_csv(_require_file(args.data, "dataset"))
    if frame.labels.shape[0] != latent_spec.n2:
        raise ConfigError(f"dataset has {frame.labels.shape[0]} label columns, "
                          f"config declares n2 = {latent_spec.n2}")
    if frame.n_channels != latent_spec.l:
        raise ConfigError(f"dataset has {frame.n_channels} channels, config declares "
                          f"l = {latent_spec.l}")
    for i, k in enumerate(latent_spec.K):
        if frame.labels[i].max() > k:
            raise ConfigError(f"label_{i + 1} exceeds K_{i + 1} = {k}")
    return prepare(frame, window_spec)


def _cmd_gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "electricity":
        frame = gen_electricity_like(args.l, args.t, args.seed, year_scale=args.year_scale)
    else:
        frame = gen_gait_like(args.l, args.t, args.seed)
    write_frame_csv(frame, out / "data.csv")
    print(f"wrote {out / 'data.csv'} ({frame.n_channels} channels x {frame.length} steps, "
          f"labels K={frame.label_cardinalities})")
    return 0


def _cmd_train(args) -> int:
    train_config, net_config, latent_spec, window_spec = load_config(
        _require_file(args.config, "config"))
    if args.seed is not None:
        train_config.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_config.checkpoint_path = str(out / "checkpoint.bin")
    train_config.log_path = str(out / "trainlog.jsonl")
    dataset = _load_dataset(args, window_spec, latent_spec)
    result = train(train_config, dataset, latent_spec, net_config)
    if train_config.epochs == 0 or not Path(train_config.checkpoint_path).exists():
        result.model.save(train_config.checkpoint_path)
    write_metrics_json([result.run], out / "metrics.json")
    if result.aborted:
        print(f"training aborted: {result.abort_reason}", file=sys.stderr)
        return 1
    print(f"seed {train_config.seed} [{train_config.variant}] "
          f"test recon RRSE {result.run.rrse_recon:.4f}, "
          f"forecast RRSE {result.run.rrse_forecast:.4f}"
          + (f", MIG {result.run.mig:.4f}" if result.run.mig is not None else ""))
    return 0


def _cmd_eval(args) -> int:
    train_config, net_config, latent_spec, window_spec = load_config(
        _require_file(args.config, "config"))
    model = DeepDive.load(_require_file(args.checkpoint, "checkpoint"))
    dataset = _load_dataset(args, window_spec, latent_spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    test = evaluate(model, dataset.test)
    mig_score = None
    if latent_spec.n2 and latent_spec.n1 + latent_spec.n2 >= 2 and len(dataset.test) >= 10:
        mig_score = mig(latent_matrix(model, dataset.test), dataset.test.labels)
    run = RunResult(variant=train_config.variant, seed=train_config.seed,
                    rrse_recon=test["rrse_recon"], rrse_forecast=test["rrse_forecast"],
                    mig=mig_score)
    write_metrics_json([run], out / "metrics.json")
    print(f"test recon RRSE {run.rrse_recon:.4f}, forecast RRSE {run.rrse_forecast:.4f}"
          + (f", MIG {run.mig:.4f}" if run.mig is not None else ""))
    return 0


def _cmd_verify(args) -> int:
    out = Path(args.out) / "verify"
    out.mkdir(parents=True, exist_ok=True)
    reports = run_all(args.seed, n_mc=args.n_mc)
    for report in reports:
        with open(out / f"{report.check}.json", "w") as fh:
            json.dump(report.to_record(), fh, indent=2)
        status = "PASS" if report.passed else "FAIL"
        print(f"[{status}] {report.check}: gap={report.gap:+.3e} tol={report.tolerance:.2e}")
    return 0 if all(r.passed for r in reports) else 1


def _cmd_export_latent(args) -> int:
    _, _, latent_spec, window_spec = load_config(_require_file(args.config, "config"))
    model = DeepDive.load(_require_file(args.checkpoint, "checkpoint"))
    dataset = _load_dataset(args, window_spec, latent_spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_latent(model, dataset.test, out / "latent.csv")
    print(f"wrote {out / 'latent.csv'} ({len(dataset.test)} rows)")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "verify": _cmd_verify,
    "export-latent": _cmd_export_latent,
}


def cli_dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
