"""Schedule contracts: freezing, isolation, determinism, smoke trend."""

import numpy as np
import pytest

from deepdive.autodiff import Tensor
from deepdive.data import WindowSpec, gen_electricity_like, prepare
from deepdive.model import DeepDive, LatentSpec, NetworkConfig
from deepdive.rng import substream
from deepdive.training import (
    TrainConfig,
    build_optimizers,
    freeze_mask,
    interleaved_step,
    train,
)

SPEC = LatentSpec(l=2, n1=2, n2=2, K=(24, 7))
NET = NetworkConfig(encoder_widths=(24,), decoder_widths=(24,), L=12, H=2, h=8)


def small_dataset(t=1200, stride=6, l=2):
    frame = gen_electricity_like(l=l, t=t, seed=3)
    labels = frame.labels[:2]  # hour + day only, to match SPEC
    frame.labels = labels
    frame.label_cardinalities = (24, 7)
    return prepare(frame, WindowSpec(L=12, H=2, stride=stride, ratios=(3, 1, 1)))


@pytest.fixture(scope="module")
def dataset():
    return small_dataset()


class TestFreezeMask:
    def setup_method(self):
        self.model = DeepDive(SPEC, NET, substream(0, "fm"))

    def test_main_freezes_all_rbf(self):
        mask = freeze_mask(self.model, "main")
        for name in self.model.params:
            if name.startswith("rbf."):
                assert name in mask
        assert "encoder.head.b.1.weight" in mask
        assert "encoder.head.mu.weight" not in mask
        assert "decoder.recon.out.weight" not in mask

    def test_classifier_freezes_other_labels(self):
        mask = freeze_mask(self.model, "classifier", 1)
        assert all(n in mask for n in self.model.params if n.startswith("rbf.2."))
        assert all(n not in mask for n in self.model.params if n.startswith("rbf.1."))
        assert "encoder.trunk.0.weight" not in mask
        assert "encoder.head.b.2.weight" in mask
        assert "fusion.attn.wq" in mask

    def test_union_of_trainable_sets_covers_everything(self):
        trainable = set()
        for mode, label in [("main", None), ("classifier", 1), ("classifier", 2)]:
            mask = freeze_mask(self.model, mode, label)
            trainable |= {n for n in self.model.params if n not in mask}
        assert trainable == set(self.model.params)

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            freeze_mask(self.model, "finetune")
        with pytest.raises(ValueError):
            freeze_mask(self.model, "classifier", 9)


class TestInterleavedStep:
    def _ingredients(self, spec=SPEC, seed=1):
        model = DeepDive(spec, NET, substream(seed, "is"))
        config = TrainConfig(epochs=1, batch_size=8, seed=seed,
                             variant="deepdive" if spec.n2 else "conditional_only")
        rng = substream(seed, "is-noise")
        x = Tensor(substream(seed, "is-x").standard_normal((8, spec.l, NET.L)))
        y = Tensor(substream(seed, "is-y").standard_normal((8, spec.l, NET.H)))
        if spec.n2:
            labels = np.stack([substream(seed, "is-l").integers(1, k + 1, size=8)
                               for k in spec.K], axis=1)
        else:
            labels = np.zeros((8, 0), dtype=np.int64)
        return model, config, rng, x, y, labels

    def test_substep_count(self):
        model, config, rng, x, y, labels = self._ingredients()
        steps = interleaved_step(model, x, y, labels, config, build_optimizers(model, config), rng)
        assert [m for m, _ in steps] == ["classifier_1", "classifier_2", "main"]

    def test_conditional_only_single_substep(self):
        spec = LatentSpec(l=2, n1=3, n2=0)
        model, config, rng, x, y, labels = self._ingredients(spec=spec, seed=2)
        steps = interleaved_step(model, x, y, labels, config, build_optimizers(model, config), rng)
        assert [m for m, _ in steps] == ["main"]

    def test_main_substep_keeps_rbf_bits(self):
        model, config, rng, x, y, labels = self._ingredients(seed=3)
        opts = build_optimizers(model, config)
        for i in (1, 2):
            from deepdive.training import _classifier_substep
            _classifier_substep(model, x, labels, i, opts, rng)
        before = {n: p.data.copy() for n, p in model.params.items()
                  if n.startswith("rbf.") or n.startswith("encoder.head.b.")}
        from deepdive.training import _main_substep
        _main_substep(model, x, y, labels, config, opts, rng)
        for name, value in before.items():
            assert np.array_equal(model.params[name].data, value), name

    def test_classifier_substep_moves_only_its_path(self):
        model, config, rng, x, y, labels = self._ingredients(seed=4)
        opts = build_optimizers(model, config)
        before = {n: p.data.copy() for n, p in model.params.items()}
        from deepdive.training import _classifier_substep
        _classifier_substep(model, x, labels, 1, opts, rng)
        moved = {n for n in before if not np.array_equal(model.params[n].data, before[n])}
        allowed = {n for n in before
                   if n.startswith(("encoder.trunk.", "encoder.head.b.1.", "rbf.1."))}
        assert moved <= allowed
        assert any(n.startswith("rbf.1.") for n in moved)

    def test_no_cross_label_gradient_leakage(self):
        model, config, rng, x, y, labels = self._ingredients(seed=5)
        opts = build_optimizers(model, config)
        from deepdive.training import _classifier_substep
        _classifier_substep(model, x, labels, 1, opts, None)
        for name, p in model.params.items():
            if name.startswith("rbf.2."):
                g = p.tensor.grad
                assert g is None or not np.any(g), name


class TestTrain:
    def test_zero_epochs_returns_initialized_model(self, dataset):
        config = TrainConfig(epochs=0, batch_size=16, seed=0)
        result = train(config, dataset, SPEC, NET)
        fresh = DeepDive(SPEC, NET, substream(0, "init"))
        for name, p in fresh.params.items():
            np.testing.assert_array_equal(p.data, result.model.params[name].data)
        assert result.log == [] and not result.aborted

    def test_loss_trend_improves(self, dataset):
        config = TrainConfig(epochs=6, batch_size=32, seed=1)
        result = train(config, dataset, SPEC, NET)
        mains = [r for r in result.log if r["mode"] == "main"]
        first = np.mean([r["total"] for r in mains if r["epoch"] == 0])
        last = np.mean([r["total"] for r in mains if r["epoch"] == config.epochs - 1])
        assert last < first

    def test_same_seed_bit_identical(self, dataset):
        config = TrainConfig(epochs=2, batch_size=32, seed=7)
        r1 = train(config, dataset, SPEC, NET)
        r2 = train(TrainConfig(epochs=2, batch_size=32, seed=7), dataset, SPEC, NET)
        for name, p in r1.model.params.items():
            assert np.array_equal(p.data, r2.model.params[name].data), name
        assert r1.log == r2.log

    def test_epoch_metrics_and_run_result(self, dataset):
        config = TrainConfig(epochs=2, batch_size=32, seed=2)
        result = train(config, dataset, SPEC, NET)
        assert len(result.epoch_metrics) == 2
        assert result.run.variant == "deepdive"
        assert np.isfinite(result.run.rrse_recon) and np.isfinite(result.run.rrse_forecast)
        assert result.run.mig is not None

    def test_variant_spec_validation(self, dataset):
        with pytest.raises(ValueError, match="n2 = 0"):
            train(TrainConfig(epochs=1, variant="conditional_only"), dataset, SPEC, NET)
        with pytest.raises(ValueError, match="n1 = 0"):
            train(TrainConfig(epochs=1, variant="marginal_only"), dataset, SPEC, NET)

    def test_marginal_only_runs(self, dataset):
        spec = LatentSpec(l=2, n1=0, n2=2, K=(24, 7))
        config = TrainConfig(epochs=1, batch_size=32, seed=3, variant="marginal_only")
        result = train(config, dataset, spec, NET)
        modes = {r["mode"] for r in result.log}
        assert modes == {"classifier_1", "classifier_2", "main"}
        mains = [r for r in result.log if r["mode"] == "main"]
        assert all(r["kl_a"] == 0.0 for r in mains)

    def test_beta_tcvae_variant_runs(self, dataset):
        spec = LatentSpec(l=2, n1=4, n2=0)
        config = TrainConfig(epochs=1, batch_size=32, seed=4, variant="beta_tcvae", beta=3.0)
        result = train(config, dataset, spec, NET)
        assert all(r["mode"] == "main" for r in result.log)
        assert all(r["tc"] is not None for r in result.log)

    def test_per_epoch_interleave(self, dataset):
        config = TrainConfig(epochs=1, batch_size=64, seed=5, interleave="per_epoch")
        result = train(config, dataset, SPEC, NET)
        modes = [r["mode"] for r in result.log]
        n_batches = len(modes) // 3
        assert modes[:n_batches] == ["classifier_1"] * n_batches
        assert modes[-n_batches:] == ["main"] * n_batches

    def test_log_and_checkpoint_written(self, dataset, tmp_path):
        ckpt = tmp_path / "checkpoint.bin"
        logp = tmp_path / "trainlog.jsonl"
        config = TrainConfig(epochs=1, batch_size=32, seed=6,
                             checkpoint_path=str(ckpt), log_path=str(logp))
        result = train(config, dataset, SPEC, NET)
        assert ckpt.exists()
        lines = logp.read_text().strip().split("\n")
        assert len(lines) == len(result.log)
        import json
        rec = json.loads(lines[0])
        assert {"epoch", "batch", "mode", "mse_x", "mse_y", "kl_a", "ce", "total"} <= set(rec)

        reloaded = DeepDive.load(ckpt)
        for name, p in result.model.params.items():
            np.testing.assert_array_equal(p.data, reloaded.params[name].data)
