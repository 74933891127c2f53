import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from missbias.ablation import AblationPolicy
from missbias.core import CalibratorParams, Parametrization, apply_calibrator, kl_divergence, softmax
from missbias.errors import ContractError
from missbias.fit import CalibratorEnsemble
from missbias.metrics import (
    PredictablePipeline,
    accuracy_vs_rate,
    ablated_predictions,
    class_frequency,
    missingness_bias,
    rate_rng,
    reference_frequency,
    sensitivity,
    sufficiency,
    top_k_rank,
)
from missbias.models import DeskModel, ModelKind


class ConstantModel:
    """Always prefers class 0, whatever the input."""

    m = 2
    n = 4

    def logits(self, X):
        X = np.atleast_2d(X)
        return np.tile([1.0, 0.0], (len(X), 1))


def linear_model(rng, n=5, m=2):
    W = rng.normal(size=(n, m))
    return DeskModel(ModelKind.SOFTMAX_REGRESSION, ((W, rng.normal(size=m)),), np.zeros(n), np.ones(n))


class TestClassFrequency:
    @pytest.mark.parametrize("preds, m, expected", [
        ([0, 0, 1, 1], 2, [0.5, 0.5]),
        ([2], 3, [0, 0, 1]),
        ([0] * 9 + [1], 2, [0.9, 0.1]),
    ])
    def test_counts(self, preds, m, expected):
        np.testing.assert_array_equal(class_frequency(preds, m), expected)

    def test_rejects(self):
        with pytest.raises(ContractError):
            class_frequency([], 2)
        with pytest.raises(ContractError):
            class_frequency([3], 2)


class TestPipeline:
    def test_no_calibrator_passes_logits(self, small_linear, small_clusters):
        X = small_clusters.features[:5]
        np.testing.assert_array_equal(PredictablePipeline(small_linear).logits(X), small_linear.logits(X))

    def test_ensemble_picks_member_per_row(self, small_linear, small_clusters):
        low = CalibratorParams.identity(3)
        high = CalibratorParams(Parametrization.DENSE, 2 * np.eye(3), np.ones(3))
        pipe = PredictablePipeline(small_linear, CalibratorEnsemble(((0.0, low), (1.0, high))))
        X = small_clusters.features[:2]
        masks = np.zeros((2, 6), dtype=bool)
        masks[1] = True
        out = pipe.masked_logits(X, masks)
        np.testing.assert_allclose(out[0], small_linear.logits(X[:1])[0], rtol=1e-15)
        np.testing.assert_allclose(out[1], apply_calibrator(high, small_linear.logits(np.zeros((1, 6))))[0], rtol=1e-15)

    def test_unconditioned_only_ensemble(self, small_linear, small_clusters):
        cal = CalibratorParams(Parametrization.DENSE, 3 * np.eye(3), np.zeros(3))
        pipe = PredictablePipeline(small_linear, CalibratorEnsemble((), cal))
        X = small_clusters.features[:3]
        np.testing.assert_array_equal(pipe.logits(X), apply_calibrator(cal, small_linear.logits(X)))

    def test_class_count_mismatch(self, small_linear):
        with pytest.raises(ContractError):
            PredictablePipeline(small_linear, CalibratorParams.identity(2))


class TestMissingnessBias:
    def test_rate_zero_exact(self, mlp, clusters):
        X, _ = clusters.split("test")
        assert missingness_bias(PredictablePipeline(mlp), X, 0.0) == 0.0

    def test_constant_predictor(self):
        pipe = PredictablePipeline(ConstantModel())
        X = np.ones((10, 4))
        got = missingness_bias(pipe, X, 0.5, reference=np.array([0.5, 0.5]))
        assert got == pytest.approx(math.log(2), abs=1e-4)

    def test_origin_attractor_is_biased(self, mlp, clusters):
        X, _ = clusters.split("test")
        assert missingness_bias(PredictablePipeline(mlp), X, 0.75, rng=np.random.default_rng(0)) >= 0.05

    def test_bias_never_negative(self, small_linear, small_clusters):
        X, _ = small_clusters.split("test")
        pipe = PredictablePipeline(small_linear)
        for i, rate in enumerate(np.linspace(0, 1, 7)):
            assert missingness_bias(pipe, X, rate, rng=np.random.default_rng(i)) >= 0.0

    def test_doubling_draws_within_monte_carlo_bound(self, mlp, clusters):
        X, _ = clusters.split("test")
        pipe = PredictablePipeline(mlp)
        ref = reference_frequency(mlp, X)
        p1, _ = ablated_predictions(pipe, X, 0.5, 8, np.random.default_rng(1))
        p2, _ = ablated_predictions(pipe, X, 0.5, 16, np.random.default_rng(2))
        f1, f2 = class_frequency(p1, 3), class_frequency(p2, 3)
        # delta method on KL(f || ref) with a two-sided 99% binomial band per class
        slope = np.abs(np.log((f1 + 1e-9) / (ref + 1e-9)) + 1)
        band = 2.576 * np.sqrt(f1 * (1 - f1) * (1 / len(p1) + 1 / len(p2)))
        assert abs(kl_divergence(f1, ref) - kl_divergence(f2, ref)) <= float(slope @ band)


class TestAccuracyVsRate:
    def test_grid_zero_is_clean_accuracy(self, mlp, clusters):
        X, y = clusters.split("test")
        rep = accuracy_vs_rate(PredictablePipeline(mlp), X, y, [0.0])
        assert rep.per_rate[0].accuracy == np.mean(np.argmax(mlp.logits(X), axis=1) == y)
        assert rep.per_rate[0].bias == 0.0

    def test_identity_calibrator_changes_nothing(self, mlp, clusters):
        X, y = clusters.split("test")
        grid = [0.0, 0.25, 0.5, 0.75]
        base = accuracy_vs_rate(PredictablePipeline(mlp), X, y, grid, seed=3)
        ident = accuracy_vs_rate(PredictablePipeline(mlp, CalibratorParams.identity(3)), X, y, grid, seed=3)
        assert base == ident

    def test_deterministic(self, mlp, clusters):
        X, y = clusters.split("test")
        assert accuracy_vs_rate(PredictablePipeline(mlp), X, y, [0.5], seed=4) == \
            accuracy_vs_rate(PredictablePipeline(mlp), X, y, [0.5], seed=4)

    def test_matches_direct_bias_calls(self, mlp, clusters):
        X, y = clusters.split("test")
        grid = [0.0, 0.5, 0.875]
        pipe = PredictablePipeline(mlp)
        rep = accuracy_vs_rate(pipe, X, y, grid, 8, seed=5)
        for i, point in enumerate(rep.per_rate):
            assert point.bias == missingness_bias(pipe, X, grid[i], 8, rate_rng(5, i))

    def test_grid_validation(self, mlp, clusters):
        X, y = clusters.split("test")
        with pytest.raises(ContractError):
            accuracy_vs_rate(PredictablePipeline(mlp), X, y, [0.5, 0.25])
        with pytest.raises(ContractError):
            accuracy_vs_rate(PredictablePipeline(mlp), X, y, [])


class TestTopK:
    def test_order(self):
        assert top_k_rank([0.1, 0.9, 0.5], 2) == [1, 2]

    def test_ties_low_index(self):
        assert top_k_rank([0.5, 0.5], 1) == [0]

    def test_empty(self):
        assert top_k_rank([0.3, 0.2], 0) == []

    def test_range(self):
        with pytest.raises(ContractError):
            top_k_rank([0.3], 2)


class TestFaithfulness:
    def test_boundaries_exact(self, mlp, clusters, rng):
        cal = CalibratorParams(Parametrization.DENSE, np.eye(3) + 0.1, np.ones(3))
        for pipe in (PredictablePipeline(mlp), PredictablePipeline(mlp, cal)):
            for x in clusters.features[::97]:
                alpha = rng.normal(size=16)
                assert sufficiency(pipe, x, alpha, 16) == 0.0
                assert sensitivity(pipe, x, alpha, 0) == 0.0

    def test_full_keep_vs_full_ablate(self, mlp, clusters, rng):
        pipe = PredictablePipeline(mlp)
        x = clusters.features[-1]
        alpha = rng.normal(size=16)
        assert sensitivity(pipe, x, alpha, 16) == sufficiency(pipe, x, alpha, 0)

    def test_empty_keep_positive_off_class_zero(self, mlp, clusters, rng):
        pipe = PredictablePipeline(mlp)
        X, y = clusters.split("test")
        x = X[np.argmax(np.argmax(mlp.logits(X), axis=1) != 0)]
        assert sufficiency(pipe, x, rng.normal(size=16), 0) > 0.0

    def test_identity_calibration_exact(self, mlp, clusters, rng):
        x = clusters.features[700]
        alpha = rng.normal(size=16)
        plain, ident = PredictablePipeline(mlp), PredictablePipeline(mlp, CalibratorParams.identity(3))
        for k in (0, 4, 9):
            assert sufficiency(plain, x, alpha, k) == sufficiency(ident, x, alpha, k)
            assert sensitivity(plain, x, alpha, k) == sensitivity(ident, x, alpha, k)

    def test_deterministic(self, mlp, clusters, rng):
        x, alpha = clusters.features[3], rng.normal(size=16)
        pipe = PredictablePipeline(mlp)
        assert sufficiency(pipe, x, alpha, 5) == sufficiency(pipe, x, alpha, 5)

    def test_linear_model_top_feature_matters_most(self):
        rng = np.random.default_rng(0)
        checked = 0
        while checked < 25:
            model = linear_model(rng)
            x = rng.normal(size=5)
            W = model.layers[0][0]
            y_hat = int(np.argmax(model.logits(x)))
            contrib = x * (W[:, y_hat] - W[:, 1 - y_hat])
            if np.any(contrib <= 0):
                continue
            checked += 1
            pipe = PredictablePipeline(model)
            clean = softmax(model.logits(x))[y_hat]
            drops = []
            for j in range(5):
                xa = x.copy()
                xa[j] = 0.0
                drops.append(clean - softmax(model.logits(xa))[y_hat])
            bottom = int(np.argmin(contrib))
            assert sensitivity(pipe, x, np.abs(contrib), 1) >= abs(drops[bottom])
            assert sensitivity(pipe, x, np.abs(contrib), 1) == pytest.approx(max(drops), abs=1e-15)

    def test_attribution_length_checked(self, mlp, clusters):
        with pytest.raises(ContractError):
            sufficiency(PredictablePipeline(mlp), clusters.features[0], np.zeros(3), 1)

    def test_grouped_units(self, mlp, clusters):
        pipe = PredictablePipeline(mlp, policy=AblationPolicy.zero(group_size=4))
        x = clusters.features[900]
        assert sufficiency(pipe, x, np.arange(4.0), 4) == 0.0
        assert sensitivity(pipe, x, np.arange(4.0), 4) == sufficiency(pipe, x, np.arange(4.0), 0)

    @given(st.integers(0, 16), st.integers(0, 2**31))
    def test_values_are_probability_differences(self, k, seed):
        rng = np.random.default_rng(seed)
        model = linear_model(rng, n=16, m=3)
        pipe = PredictablePipeline(model)
        x, alpha = rng.normal(size=16), rng.normal(size=16)
        assert -1.0 <= sufficiency(pipe, x, alpha, k) <= 1.0
        assert -1.0 <= sensitivity(pipe, x, alpha, k) <= 1.0
