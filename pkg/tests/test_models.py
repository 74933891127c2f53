import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from missbias.ablation import AblationPolicy, apply_ablation, sample_masks_fixed
from missbias.core import predict_class
from missbias.errors import ContractError, IngestionError
from missbias.metrics import PredictablePipeline, missingness_bias
from missbias.models import (
    DeskModel,
    LabeledDataset,
    ModelKind,
    SyntheticSpec,
    TrainConfig,
    gen_synthetic_clusters,
    load_csv_dataset,
    model_logits,
    retrain_on_ablations,
    split_indices,
    train_model,
)


def linearly_separable(X, y):
    """Feasibility of y_i (w.x_i + c) >= 1 as a linear program."""
    s = np.where(y == 1, 1.0, -1.0)
    A = -s[:, None] * np.hstack([X, np.ones((len(X), 1))])
    res = linprog(np.zeros(X.shape[1] + 1), A_ub=A, b_ub=-np.ones(len(X)), bounds=(None, None), method="highs")
    return res.status == 0


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestSynthetic:
    def test_counting(self):
        data = gen_synthetic_clusters(SyntheticSpec(samples_per_class=100))
        assert data.features.shape == (300, 16)
        np.testing.assert_array_equal(np.bincount(data.labels), [100, 100, 100])

    def test_deterministic(self):
        a = gen_synthetic_clusters(SyntheticSpec(seed=5))
        b = gen_synthetic_clusters(SyntheticSpec(seed=5))
        np.testing.assert_array_equal(a.features, b.features)
        for k in a.splits:
            np.testing.assert_array_equal(a.splits[k], b.splits[k])

    def test_means_geometry(self):
        spec = SyntheticSpec(m=4, n=8, separation=6.0, seed=2)
        mu = spec.means()
        np.testing.assert_array_equal(mu[0], 0.0)
        np.testing.assert_allclose(mu[1:] @ mu[1:].T, 36.0 * np.eye(3), atol=1e-12)

    def test_custom_means_validated(self):
        with pytest.raises(ContractError):
            gen_synthetic_clusters(SyntheticSpec(m=2, n=2, cluster_means=((1.0, 0.0), (0.0, 1.0))))
        with pytest.raises(ContractError):
            gen_synthetic_clusters(SyntheticSpec(m=2, n=2, cluster_means=((0.0, 0.0), (0.0, 0.0))))
        data = gen_synthetic_clusters(SyntheticSpec(m=2, n=2, cluster_means=((0.0, 0.0), (5.0, 0.0))))
        assert data.m == 2

    def test_bad_spec(self):
        with pytest.raises(ContractError):
            gen_synthetic_clusters(SyntheticSpec(cluster_scale=0.0))

    def test_origin_predicts_class_zero(self, mlp):
        assert predict_class(mlp.logits(np.zeros(16))) == 0

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_ablation_skews_toward_class_zero(self, clusters, kind):
        model = train_model(clusters, kind, TrainConfig(seed=0))
        X, _ = clusters.split("test")
        clean0 = np.mean(predict_class(model.logits(X)) == 0)
        rows = np.repeat(X, 8, axis=0)
        masks = sample_masks_fixed(len(rows), 16, 12, np.random.default_rng(0))
        ablated0 = np.mean(predict_class(model.logits(apply_ablation(rows, masks, AblationPolicy.zero()))) == 0)
        assert ablated0 - clean0 >= 0.2


class TestSplits:
    @given(st.integers(3, 500), st.integers(0, 1000))
    def test_disjoint_covering_reproducible(self, N, seed):
        s = split_indices(N, seed)
        joined = np.concatenate([s["train"], s["calibration"], s["test"]])
        np.testing.assert_array_equal(np.sort(joined), np.arange(N))
        again = split_indices(N, seed)
        for k in s:
            np.testing.assert_array_equal(s[k], again[k])

    def test_bad_fractions(self):
        with pytest.raises(ContractError):
            split_indices(10, 0, (0.5, 0.5, 0.5))

    def test_dataset_validates_splits(self):
        with pytest.raises(ContractError):
            LabeledDataset(np.zeros((3, 2)), [0, 1, 0], 2, {"train": [0, 1], "calibration": [1], "test": [2]})


class TestCsv:
    def test_toy_table(self, tmp_path):
        path = write_csv(tmp_path / "toy.csv", "a,b,label\n1,2,yes\n3,4,no\n5,6,yes\n7,8,no\n")
        data = load_csv_dataset(path, "label", positive_class="yes", split_fractions=(0.5, 0.25, 0.25))
        assert data.features.shape == (4, 2) and data.m == 2
        np.testing.assert_array_equal(data.labels, [1, 0, 1, 0])
        assert data.feature_names == ["a", "b"]
        # standardized with train statistics
        np.testing.assert_allclose(data.split("train")[0].mean(axis=0), 0.0, atol=1e-12)

    def test_label_map_and_sorted_default(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "y,x\ncat,1\ndog,2\nbird,3\n")
        np.testing.assert_array_equal(load_csv_dataset(path, "y").labels, [1, 2, 0])
        mapped = load_csv_dataset(path, "y", label_map={"cat": 0, "dog": 1, "bird": 1})
        np.testing.assert_array_equal(mapped.labels, [0, 1, 1])

    def test_non_numeric_cell_cites_row(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", "a,b,label\n1,2,0\n3,4,1\n5,oops,0\n7,8,1\n")
        with pytest.raises(IngestionError, match=r"row 3.*'b'"):
            load_csv_dataset(path, "label")

    def test_ragged_row(self, tmp_path):
        path = write_csv(tmp_path / "bad.csv", "a,b,label\n1,2,0\n3,1\n")
        with pytest.raises(IngestionError, match="row 2"):
            load_csv_dataset(path, "label")

    def test_missing_file_and_column(self, tmp_path):
        with pytest.raises(IngestionError):
            load_csv_dataset(tmp_path / "none.csv", "label")
        path = write_csv(tmp_path / "t.csv", "a,b\n1,2\n")
        with pytest.raises(IngestionError):
            load_csv_dataset(path, "label")

    def test_unmapped_label(self, tmp_path):
        path = write_csv(tmp_path / "t.csv", "y,x\ncat,1\ndog,2\n")
        with pytest.raises(IngestionError):
            load_csv_dataset(path, "y", label_map={"cat": 0})

    def test_reload_same_splits(self, tmp_path):
        rows = "\n".join(f"{i},{i % 3},{i % 2}" for i in range(40))
        path = write_csv(tmp_path / "t.csv", "a,b,label\n" + rows + "\n")
        a = load_csv_dataset(path, "label", seed=3)
        b = load_csv_dataset(path, "label", seed=3)
        for k in a.splits:
            np.testing.assert_array_equal(a.splits[k], b.splits[k])


class TestTraining:
    def test_separable_data_fits(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 3))
        y = (X @ np.array([1.0, -2.0, 0.5]) + 0.3 > 0).astype(int)
        margin = np.abs(X @ np.array([1.0, -2.0, 0.5]) + 0.3)
        X, y = X[margin > 0.2], y[margin > 0.2]
        assert linearly_separable(X, y)
        N = len(y)
        data = LabeledDataset(X, y, 2, {"train": np.arange(N), "calibration": [], "test": []})
        model = train_model(data, ModelKind.SOFTMAX_REGRESSION, TrainConfig(lr=0.1, steps=1000, weight_decay=0.0))
        assert np.mean(predict_class(model.logits(X)) == y) >= 0.99

    def test_mlp_needs_width(self, small_clusters):
        with pytest.raises(ContractError):
            train_model(small_clusters, ModelKind.MLP, TrainConfig(hidden=0))

    @pytest.mark.parametrize("kind", list(ModelKind))
    def test_same_seed_same_weights(self, small_clusters, kind):
        cfg = TrainConfig(steps=50, seed=3)
        a, b = train_model(small_clusters, kind, cfg), train_model(small_clusters, kind, cfg)
        for (Wa, ba), (Wb, bb) in zip(a.layers, b.layers):
            np.testing.assert_array_equal(Wa, Wb)
            np.testing.assert_array_equal(ba, bb)


class TestLogits:
    def test_zero_weights(self):
        model = DeskModel(ModelKind.SOFTMAX_REGRESSION, ((np.zeros((3, 2)), np.zeros(2)),), np.zeros(3), np.ones(3))
        np.testing.assert_array_equal(model.logits(np.array([[1.0, -4.0, 9.0]])), 0.0)

    def test_hand_two_by_two(self):
        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        model = DeskModel(ModelKind.SOFTMAX_REGRESSION, ((W, np.array([0.5, -0.5])),),
                          np.array([1.0, 1.0]), np.array([2.0, 4.0]))
        # standardized x = ((3-1)/2, (5-1)/4) = (1, 1); logits = (1+3+0.5, 2+4-0.5)
        np.testing.assert_array_equal(model_logits(model, np.array([3.0, 5.0])), [4.5, 5.5])

    def test_mlp_matches_hand_rolled(self, rng):
        for _ in range(20):
            W0, b0 = rng.normal(size=(3, 3)), rng.normal(size=3)
            W1, b1 = rng.normal(size=(3, 3)), rng.normal(size=3)
            mu, sd = rng.normal(size=3), rng.uniform(0.5, 2, size=3)
            model = DeskModel(ModelKind.MLP, ((W0, b0), (W1, b1)), mu, sd)
            x = rng.normal(size=3)
            xs = [(x[j] - mu[j]) / sd[j] for j in range(3)]
            h = [max(0.0, sum(xs[i] * W0[i, j] for i in range(3)) + b0[j]) for j in range(3)]
            ref = [sum(h[i] * W1[i, k] for i in range(3)) + b1[k] for k in range(3)]
            np.testing.assert_allclose(model.logits(x), ref, atol=1e-9)

    def test_pure(self, mlp, clusters):
        X = clusters.features[:30]
        np.testing.assert_array_equal(mlp.logits(X), mlp.logits(X))

    def test_wrong_width(self, mlp):
        with pytest.raises(ContractError):
            mlp.logits(np.zeros(5))

    def test_frozen_weights(self, mlp):
        with pytest.raises(ValueError):
            mlp.layers[0][0][0, 0] = 1.0


class TestRetrain:
    def test_no_masking_matches_plain_training(self, small_clusters):
        cfg = TrainConfig(steps=100, seed=1)
        plain = train_model(small_clusters, ModelKind.MLP, cfg)
        retrained = retrain_on_ablations(small_clusters, ModelKind.MLP, cfg, AblationPolicy.zero(),
                                         np.random.default_rng(0), mask_prob=0.0)
        for (Wa, _), (Wb, _) in zip(plain.layers, retrained.layers):
            np.testing.assert_allclose(Wa, Wb, atol=1e-8)

    def test_lowers_bias_at_half_rate(self, clusters, mlp):
        retrained = retrain_on_ablations(clusters, ModelKind.MLP, TrainConfig(seed=0), AblationPolicy.zero(),
                                         np.random.default_rng([0, 13]))
        X, _ = clusters.split("test")
        base = PredictablePipeline(mlp)
        anchor = np.bincount(predict_class(mlp.logits(X)), minlength=3) / len(X)
        b_base = missingness_bias(base, X, 0.5, rng=np.random.default_rng(1), reference=anchor)
        b_retr = missingness_bias(PredictablePipeline(retrained), X, 0.5, rng=np.random.default_rng(1),
                                  reference=anchor)
        assert b_retr < b_base

    def test_deterministic(self, small_clusters):
        cfg = TrainConfig(steps=40, seed=2)
        a = retrain_on_ablations(small_clusters, ModelKind.MLP, cfg, rng=np.random.default_rng(5))
        b = retrain_on_ablations(small_clusters, ModelKind.MLP, cfg, rng=np.random.default_rng(5))
        for (Wa, _), (Wb, _) in zip(a.layers, b.layers):
            np.testing.assert_array_equal(Wa, Wb)
