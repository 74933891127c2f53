"""Desk-scale classifiers and datasets.

Two model families are trained in-repo with full-batch Adam: multinomial
softmax regression and a one-hidden-layer ReLU network.  Both standardize
their input internally, so the standardizer is part of the frozen model.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ablation import AblationPolicy, apply_ablation, sample_masks_bernoulli
from .core import log_softmax, softmax
from .errors import ContractError, IngestionError, TrainingError
from .optim import Adam

SPLITS = ("train", "calibration", "test")


@dataclass(eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    m: int
    splits: dict[str, np.ndarray]
    feature_means: np.ndarray = field(init=False)
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ContractError("features must be (N, n) with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features contain non-finite values")
        if np.any((self.labels < 0) | (self.labels >= self.m)):
            raise ContractError("label outside [0, m)")
        self.splits = {k: np.asarray(self.splits[k], dtype=np.int64) for k in SPLITS}
        joined = np.concatenate([self.splits[k] for k in SPLITS])
        if len(joined) != len(self.labels) or not np.array_equal(np.sort(joined), np.arange(len(self.labels))):
            raise ContractError("splits must be disjoint and cover every row")
        if len(self.splits["train"]) == 0:
            raise ContractError("train split is empty")
        self.feature_means = self.features[self.splits["train"]].mean(axis=0)

    @property
    def n(self) -> int:
        return self.features.shape[1]

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.features[idx], self.labels[idx]


def split_indices(N: int, seed: int, fractions=(0.7, 0.15, 0.15)) -> dict[str, np.ndarray]:
    """Seeded shuffle cut into train/calibration/test blocks."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or not math.isclose(sum(fractions), 1.0):
        raise ContractError("split fractions must be three non-negative numbers summing to 1")
    perm = np.random.default_rng(seed).permutation(N)
    n_train = int(round(fractions[0] * N))
    n_cal = int(round(fractions[1] * N))
    return {
        "train": np.sort(perm[:n_train]),
        "calibration": np.sort(perm[n_train:n_train + n_cal]),
        "test": np.sort(perm[n_train + n_cal:]),
    }


# ---------------------------------------------------------------------------
# synthetic origin-attractor clusters


@dataclass(frozen=True)
class SyntheticSpec:
    """Isotropic Gaussian clusters with class 0 centred at the origin.

    When ``cluster_means`` is omitted, classes 1..m-1 get mutually orthogonal
    random directions of length ``separation`` that spread over every feature.
    """

    m: int = 3
    n: int = 16
    samples_per_class: int = 500
    cluster_scale: float = 1.0
    separation: float = 10.0
    cluster_means: tuple | None = None
    seed: int = 0
    split_fractions: tuple = (0.7, 0.15, 0.15)

    def means(self) -> np.ndarray:
        if self.cluster_means is not None:
            mu = np.array(self.cluster_means, dtype=np.float64)
            if mu.shape != (self.m, self.n):
                raise ContractError(f"cluster_means must be {self.m}x{self.n}")
            if np.any(mu[0] != 0):
                raise ContractError("class 0 must sit at the origin")
            if len({tuple(r) for r in mu}) != self.m:
                raise ContractError("cluster means must be distinct")
            return mu
        if self.m - 1 > self.n:
            raise ContractError("need n >= m - 1 for orthogonal cluster directions")
        rng = np.random.default_rng([self.seed, 1])
        q, _ = np.linalg.qr(rng.standard_normal((self.n, self.m - 1)))
        return np.vstack([np.zeros(self.n), self.separation * q.T])


def gen_synthetic_clusters(spec: SyntheticSpec) -> LabeledDataset:
    if spec.m < 2 or spec.n < 1 or spec.samples_per_class < 1:
        raise ContractError("synthetic spec needs m >= 2, n >= 1, samples_per_class >= 1")
    if not spec.cluster_scale > 0:
        raise ContractError("cluster_scale must be positive")
    mu = spec.means()
    rng = np.random.default_rng([spec.seed, 2])
    labels = np.repeat(np.arange(spec.m), spec.samples_per_class)
    X = mu[labels] + spec.cluster_scale * rng.standard_normal((len(labels), spec.n))
    splits = split_indices(len(labels), spec.seed, spec.split_fractions)
    return LabeledDataset(X, labels, spec.m, splits)


# ---------------------------------------------------------------------------
# CSV ingestion


def load_csv_dataset(path, label_column: str, positive_class: str | None = None,
                     label_map: dict[str, int] | None = None, seed: int = 0,
                     split_fractions=(0.7, 0.15, 0.15)) -> LabeledDataset:
    """Read a comma-separated table with a header row.

    Labels are mapped by ``label_map`` if given, else to 1/0 against
    ``positive_class``, else to the index of each distinct value in sorted
    order.  Features are standardized with train-split statistics, so zero
    imputation afterwards means imputing the training mean.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise IngestionError(f"{path}: unknown label column {label_column!r}")
        li = header.index(label_column)
        names = [h for i, h in enumerate(header) if i != li]
        rows, raw_labels = [], []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}")
            vals = []
            for i, cell in enumerate(row):
                if i == li:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {rownum}, column {header[i]!r}: non-numeric value {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestionError(f"{path}: row {rownum}, column {header[i]!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
            raw_labels.append(row[li].strip())
    if not rows:
        raise IngestionError(f"{path}: no data rows")

    if label_map is not None:
        unknown = sorted(set(raw_labels) - set(label_map))
        if unknown:
            raise IngestionError(f"{path}: labels {unknown} missing from label_map")
        labels = [int(label_map[v]) for v in raw_labels]
        m = max(max(label_map.values()) + 1, 2)
    elif positive_class is not None:
        labels = [int(v == positive_class) for v in raw_labels]
        m = 2
    else:
        classes = sorted(set(raw_labels))
        labels = [classes.index(v) for v in raw_labels]
        m = max(len(classes), 2)

    X = np.array(rows, dtype=np.float64)
    splits = split_indices(len(X), seed, split_fractions)
    tr = X[splits["train"]]
    mu = tr.mean(axis=0)
    sd = tr.std(axis=0)
    sd[sd == 0] = 1.0
    return LabeledDataset((X - mu) / sd, labels, m, splits, feature_names=names)


# ---------------------------------------------------------------------------
# models


class ModelKind(str, enum.Enum):
    SOFTMAX_REGRESSION = "softmax_regression"
    MLP = "mlp"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    steps: int = 500
    hidden: int = 32
    seed: int = 0
    weight_decay: float = 1e-3


@dataclass(frozen=True, eq=False)
class DeskModel:
    """Frozen classifier: standardize, then a linear map or a ReLU MLP."""

    kind: ModelKind
    layers: tuple[tuple[np.ndarray, np.ndarray], ...]
    input_mean: np.ndarray
    input_scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        layers = tuple((np.array(W, dtype=np.float64), np.array(b, dtype=np.float64)) for W, b in self.layers)
        expected = 1 if self.kind is ModelKind.SOFTMAX_REGRESSION else 2
        if len(layers) != expected:
            raise ContractError(f"{self.kind.value} needs {expected} layer(s)")
        width = len(self.input_mean)
        for W, b in layers:
            if W.ndim != 2 or W.shape[0] != width or b.shape != (W.shape[1],):
                raise ContractError("layer dimensions are inconsistent")
            width = W.shape[1]
        scale = np.asarray(self.input_scale, dtype=np.float64)
        if np.any(scale <= 0):
            raise ContractError("standardization scale must be positive")
        for arr in [a for pair in layers for a in pair]:
            arr.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "input_mean", np.asarray(self.input_mean, dtype=np.float64))
        object.__setattr__(self, "input_scale", scale)

    @property
    def n(self) -> int:
        return len(self.input_mean)

    @property
    def m(self) -> int:
        return self.layers[-1][0].shape[1]

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.n:
            raise ContractError(f"model expects {self.n} features, got {X.shape[-1]}")
        h = (X - self.input_mean) / self.input_scale
        W, b = self.layers[0]
        h = h @ W + b
        if self.kind is ModelKind.MLP:
            W2, b2 = self.layers[1]
            h = np.maximum(h, 0.0) @ W2 + b2
        return h

    def proba(self, X) -> np.ndarray:
        return softmax(self.logits(X))


def model_logits(model: DeskModel, x) -> np.ndarray:
    return model.logits(x)


def _init_layers(kind: ModelKind, n: int, m: int, cfg: TrainConfig):
    if kind is ModelKind.SOFTMAX_REGRESSION:
        return {"W0": np.zeros((n, m)), "b0": np.zeros(m)}
    if cfg.hidden < 1:
        raise ContractError("MLP hidden width must be at least 1")
    rng = np.random.default_rng([cfg.seed, 3])
    return {
        "W0": rng.standard_normal((n, cfg.hidden)) * math.sqrt(2.0 / n),
        "b0": np.zeros(cfg.hidden),
        "W1": rng.standard_normal((cfg.hidden, m)) * math.sqrt(1.0 / cfg.hidden),
        "b1": np.zeros(m),
    }


def _loss_and_grads(kind, params, Xs, Y, wd):
    """Mean CE against one-hot ``Y`` plus ``wd/2 * ||W||^2`` on weight matrices."""
    N = len(Xs)
    if kind is ModelKind.SOFTMAX_REGRESSION:
        z = Xs @ params["W0"] + params["b0"]
    else:
        pre = Xs @ params["W0"] + params["b0"]
        act = np.maximum(pre, 0.0)
        z = act @ params["W1"] + params["b1"]
    loss = -np.sum(Y * log_softmax(z)) / N
    dz = (softmax(z) - Y) / N
    grads = {}
    if kind is ModelKind.SOFTMAX_REGRESSION:
        grads["W0"] = Xs.T @ dz
        grads["b0"] = dz.sum(axis=0)
    else:
        grads["W1"] = act.T @ dz
        grads["b1"] = dz.sum(axis=0)
        dpre = (dz @ params["W1"].T) * (pre > 0)
        grads["W0"] = Xs.T @ dpre
        grads["b0"] = dpre.sum(axis=0)
    if wd:
        for k in grads:
            if k.startswith("W"):
                loss += 0.5 * wd * np.sum(params[k] ** 2)
                grads[k] = grads[k] + wd * params[k]
    return loss, grads


def _train(data: LabeledDataset, kind, cfg: TrainConfig, batch_fn=None) -> DeskModel:
    kind = ModelKind(kind)
    X, y = data.split("train")
    if len(X) == 0:
        raise ContractError("train split is empty")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    params = _init_layers(kind, data.n, data.m, cfg)
    opt = Adam(params, lr=cfg.lr)
    Y = np.eye(data.m)[y]
    Xs_clean = (X - mean) / scale
    for step in range(cfg.steps):
        if batch_fn is None:
            Xs, Yb = Xs_clean, Y
        else:
            Xb, Yb = batch_fn(X, Y)
            Xs = (Xb - mean) / scale
        loss, grads = _loss_and_grads(kind, params, Xs, Yb, cfg.weight_decay)
        if not np.isfinite(loss):
            raise TrainingError(f"training loss became non-finite at step {step}")
        opt.step(grads)
    if kind is ModelKind.SOFTMAX_REGRESSION:
        layers = ((params["W0"], params["b0"]),)
    else:
        layers = ((params["W0"], params["b0"]), (params["W1"], params["b1"]))
    return DeskModel(kind, layers, mean, scale)


def train_model(data: LabeledDataset, kind=ModelKind.SOFTMAX_REGRESSION,
                cfg: TrainConfig = TrainConfig()) -> DeskModel:
    """Minimize ground-truth cross-entropy on the train split by full-batch Adam."""
    return _train(data, kind, cfg)


def retrain_on_ablations(data: LabeledDataset, kind=ModelKind.SOFTMAX_REGRESSION,
                         cfg: TrainConfig = TrainConfig(), policy: AblationPolicy | None = None,
                         rng: np.random.Generator | None = None, mask_prob: float = 0.5) -> DeskModel:
    """Retrain baseline: every step sees the clean batch plus a freshly masked copy.

    Each unit of the copy is ablated independently with ``mask_prob``.
    """
    policy = policy or AblationPolicy.zero()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    units = policy.n_units(data.n)

    def batch(X, Y):
        masks = sample_masks_bernoulli(len(X), units, mask_prob, rng)
        return np.concatenate([X, apply_ablation(X, masks, policy)]), np.concatenate([Y, Y])

    return _train(data, kind, cfg, batch)
