"""Loss components, Jensen bound estimator, total-correlation baseline."""

import math

import numpy as np
import pytest

from deepdive import autodiff as ad
from deepdive.autodiff import Tape, Tensor, grad_check
from deepdive.distributions import GaussianMixture1D, gaussian_kl_analytic, DiagonalGaussian, responsibility
from deepdive.losses import (
    LossBreakdown,
    beta_tcvae_loss,
    beta_tcvae_terms,
    ce_loss,
    classifier_loss,
    kl_bound_rhs,
    kl_conditional,
    main_loss,
    mse_loss,
)
from deepdive.model import DeepDive, ForwardResult, LatentCode, LatentSpec, NetworkConfig
from deepdive.rng import substream


def make_code(mu, log_sigma):
    mu = Tensor(np.asarray(mu, dtype=np.float64))
    ls = Tensor(np.asarray(log_sigma, dtype=np.float64))
    return LatentCode(mu_a=mu, log_sigma_a=ls, b=Tensor(np.zeros(mu.shape[:2] + (0,))), a_sample=mu)


class TestMse:
    def test_equal_is_zero(self):
        t = Tensor(np.arange(6.0).reshape(2, 3))
        assert mse_loss(t, Tensor(t.data.copy())).item() == 0.0

    def test_unit_offset(self):
        p = Tensor(np.ones((2, 2)))
        t = Tensor(np.zeros((2, 2)))
        assert mse_loss(p, t).item() == 1.0

    def test_hand_case(self):
        assert mse_loss(Tensor([0.0, 2.0]), Tensor([1.0, 0.0])).item() == 2.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(Tensor(np.zeros(2)), Tensor(np.zeros(3)))


class TestCrossEntropy:
    def test_confident_correct_is_zero(self):
        logits = Tensor(np.array([[60.0, 0.0]]))
        assert ce_loss(logits, [1]).item() == pytest.approx(0.0, abs=1e-12)

    def test_uniform_is_log_k(self):
        logits = Tensor(np.zeros((4, 3)))
        assert ce_loss(logits, [1, 2, 3, 1]).item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_hand_case(self):
        logits = Tensor(np.log(np.array([[0.1, 0.9]])))
        assert ce_loss(logits, [2]).item() == pytest.approx(-math.log(0.9), abs=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            ce_loss(Tensor(np.zeros((1, 2))), [3])
        with pytest.raises(IndexError):
            ce_loss(Tensor(np.zeros((1, 2))), [0])

    def test_classifier_loss_delegates(self):
        logits = Tensor(np.log(np.array([[0.1, 0.9]])))
        loss, value = classifier_loss(logits, [2])
        assert value == pytest.approx(-math.log(0.9), abs=1e-12)
        assert float(loss.data) == value

    def test_gradient_matches_fd(self):
        logits = Tensor(substream(0, "ce").standard_normal((4, 3)))
        labels = np.array([1, 3, 2, 2])
        assert grad_check(lambda lg: ce_loss(lg, labels), [logits]) < 1e-7


class TestKlConditional:
    def test_standard_normal_code(self):
        code = make_code(np.zeros((2, 3, 2)), np.zeros((2, 3, 2)))
        assert kl_conditional(code).item() == 0.0

    def test_single_coordinate_half(self):
        code = make_code(np.ones((1, 1, 1)), np.zeros((1, 1, 1)))
        assert kl_conditional(code).item() == pytest.approx(0.5)

    def test_empty_conditional_block(self):
        code = make_code(np.zeros((2, 3, 0)), np.zeros((2, 3, 0)))
        assert kl_conditional(code).item() == 0.0

    def test_matches_per_sample_analytic_mean(self):
        rng = substream(1, "klc")
        mu = rng.standard_normal((4, 2, 3))
        ls = rng.uniform(-1, 0.5, size=(4, 2, 3))
        code = make_code(mu, ls)
        expected = np.mean([
            gaussian_kl_analytic(DiagonalGaussian(mu[i].ravel(), ls[i].ravel()))
            for i in range(4)
        ])
        assert kl_conditional(code).item() == pytest.approx(expected, rel=1e-12)


class TestMainLoss:
    def _forward(self, seed=2, n=3):
        spec = LatentSpec(l=2, n1=2, n2=2, K=(2, 3))
        model = DeepDive(spec, NetworkConfig(L=6, H=2, h=8), substream(seed, "ml-init"))
        x = Tensor(substream(seed, "ml-x").standard_normal((n, 2, 6)))
        y = Tensor(substream(seed, "ml-y").standard_normal((n, 2, 2)))
        return x, y, model.forward(x, rng=substream(seed, "ml-noise"))

    def test_perfect_outputs_zero_total(self):
        x = Tensor(np.zeros((2, 1, 3)))
        y = Tensor(np.zeros((2, 1, 2)))
        code = make_code(np.zeros((2, 1, 1)), np.zeros((2, 1, 1)))
        out = ForwardResult(x_hat=Tensor(x.data.copy()), y_hat=Tensor(y.data.copy()),
                            code=code, psi=[], logits=[], probs=[])
        total, bd = main_loss(x, y, out)
        assert total.item() == 0.0 and bd.total == 0.0

    def test_additivity(self):
        x, y, out = self._forward()
        total, bd = main_loss(x, y, out)
        assert bd.total - bd.kl_a == pytest.approx(bd.mse_x + bd.mse_y, abs=1e-12)

    def test_matches_component_recomputation(self):
        x, y, out = self._forward(seed=3)
        total, bd = main_loss(x, y, out, labels=np.array([[1, 2], [2, 1], [1, 3]]))
        assert bd.mse_x == pytest.approx(np.mean((out.x_hat.data - x.data) ** 2), rel=1e-12)
        assert bd.mse_y == pytest.approx(np.mean((out.y_hat.data - y.data) ** 2), rel=1e-12)
        assert bd.kl_a == pytest.approx(kl_conditional(out.code).item(), rel=1e-12)
        assert total.item() == pytest.approx(bd.mse_x + bd.mse_y + bd.kl_a, rel=1e-12)
        assert len(bd.ce) == 2 and all(c >= 0 for c in bd.ce)

    def test_batch_permutation_invariance(self):
        x, y, out = self._forward(seed=4, n=4)
        total, _ = main_loss(x, y, out)
        perm = np.array([2, 0, 3, 1])
        x2 = Tensor(x.data[perm])
        out2 = ForwardResult(
            x_hat=Tensor(out.x_hat.data[perm]), y_hat=Tensor(out.y_hat.data[perm]),
            code=LatentCode(Tensor(out.code.mu_a.data[perm]),
                            Tensor(out.code.log_sigma_a.data[perm]),
                            Tensor(out.code.b.data[perm]),
                            Tensor(out.code.a_sample.data[perm])),
            psi=[], logits=[], probs=[])
        total2, _ = main_loss(x2, Tensor(y.data[perm]), out2)
        assert total.item() == pytest.approx(total2.item(), abs=1e-12)


class TestKlBoundRhs:
    MIX = GaussianMixture1D([0.4, 0.6], [-1.0, 1.5], [0.8, 1.1])

    def test_single_component_collapse(self):
        mix = GaussianMixture1D([1.0], [0.0], [1.0])
        b = np.array([-0.5, 0.0, 2.0])
        got = kl_bound_rhs(b, np.array([1.0]), mix)
        expected = -np.mean(mix.log_joint(b)[:, 0])
        assert got == pytest.approx(expected, rel=1e-12)

    def test_tightness_at_responsibilities(self):
        b = substream(5, "bound").normal(0.3, 1.0, size=200)
        q = responsibility(b, self.MIX)
        tight = kl_bound_rhs(b, q, self.MIX)
        expected = -np.mean(self.MIX.log_marginal(b))
        assert tight == pytest.approx(expected, abs=1e-10)

    def test_random_q_dominates_tight_q(self):
        rng = substream(6, "bound")
        b = rng.normal(0.0, 1.2, size=300)
        tight = kl_bound_rhs(b, responsibility(b, self.MIX), self.MIX)
        for _ in range(25):
            w = rng.uniform(0.05, 1.0, size=2)
            loose = kl_bound_rhs(b, w / w.sum(), self.MIX)
            assert loose >= tight - 1e-10

    def test_invalid_q_rejected(self):
        with pytest.raises(ValueError):
            kl_bound_rhs([0.0], np.array([0.7, 0.7]), self.MIX)
        with pytest.raises(ValueError):
            kl_bound_rhs([0.0], np.array([1.0, 0.0]), self.MIX)


class TestBetaTcvae:
    def _forward(self, n, seed=7, n1=3):
        spec = LatentSpec(l=2, n1=n1, n2=0)
        model = DeepDive(spec, NetworkConfig(L=6, H=2, h=8), substream(seed, "tc-init"))
        x = Tensor(substream(seed, "tc-x").standard_normal((n, 2, 6)))
        y = Tensor(substream(seed, "tc-y").standard_normal((n, 2, 2)))
        return x, y, model.forward(x, rng=substream(seed, "tc-noise"))

    def test_beta_one_matches_analytic_kl(self):
        """Telescoped MI + TC + dimKL is the single-sample KL estimate; at
        beta = 1 the total matches mse_x + mse_y + analytic KL within MC
        tolerance on a large batch."""
        x, y, out = self._forward(n=512)
        total, bd = beta_tcvae_loss(x, y, out, beta=1.0)
        analytic = kl_conditional(out.code).item()
        assert total.item() == pytest.approx(bd.mse_x + bd.mse_y + analytic, abs=0.1)

    def test_correlated_codes_give_positive_tc(self):
        rng = substream(8, "tc")
        u = rng.standard_normal((256, 1))
        mu = Tensor(np.repeat(u, 2, axis=1))          # dimensions are copies
        log_sigma = Tensor(np.full((256, 2), math.log(1e-3)))
        z = Tensor(mu.data + 1e-3 * rng.standard_normal((256, 2)))
        _, tc, _ = beta_tcvae_terms(mu, log_sigma, z)
        assert tc.item() > 1.0

    def test_single_dim_tc_identically_zero(self):
        rng = substream(9, "tc")
        mu = Tensor(rng.standard_normal((64, 1)))
        ls = Tensor(rng.uniform(-1, 0, (64, 1)))
        z = Tensor(mu.data + np.exp(ls.data) * rng.standard_normal((64, 1)))
        _, tc, _ = beta_tcvae_terms(mu, ls, z)
        assert abs(tc.item()) < 1e-12

    def test_batch_of_one_rejected(self):
        x, y, out = self._forward(n=1, seed=10)
        with pytest.raises(ValueError, match="2 samples"):
            beta_tcvae_loss(x, y, out, beta=1.0)

    def test_requires_no_marginal_dims(self):
        spec = LatentSpec(l=1, n1=1, n2=1, K=(2,))
        model = DeepDive(spec, NetworkConfig(L=4, H=2, h=4), substream(11, "tc"))
        x = Tensor(np.zeros((4, 1, 4)))
        y = Tensor(np.zeros((4, 1, 2)))
        out = model.forward(x)
        with pytest.raises(ValueError, match="n2"):
            beta_tcvae_loss(x, y, out, beta=1.0)

    def test_estimator_gradients_match_fd(self):
        rng = substream(12, "tc-grad")
        mu = Tensor(rng.standard_normal((5, 2)))
        ls = Tensor(rng.uniform(-0.5, 0.2, (5, 2)))
        eps = rng.standard_normal((5, 2))

        def f(mu_t, ls_t):
            z = ad.add(mu_t, ad.mul(ad.exp(ls_t), eps))
            mi, tc, dim_kl = beta_tcvae_terms(mu_t, ls_t, z)
            return ad.add(ad.add(mi, ad.mul(tc, 3.0)), dim_kl)

        assert grad_check(f, [mu, ls], step=1e-6) < 1e-6


class TestBreakdownContract:
    def test_components_finite_and_nonnegative(self):
        x, y, out = TestMainLoss()._forward(seed=13)
        _, bd = main_loss(x, y, out, labels=np.array([[1, 1], [2, 2], [1, 3]]))
        for value in (bd.mse_x, bd.mse_y, bd.kl_a, *bd.ce, bd.total):
            assert math.isfinite(value) and value >= 0.0

    def test_record_serializable(self):
        bd = LossBreakdown(1.0, 2.0, 0.5, (0.1, 0.2), None, 3.5)
        rec = bd.to_record()
        assert rec["ce"] == [0.1, 0.2] and rec["total"] == 3.5
