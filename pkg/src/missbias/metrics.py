"""Missingness bias, accuracy-vs-rate curves, and top-k faithfulness metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ablation import AblationPolicy, apply_ablation, quantize_rate, sample_masks_bernoulli, sample_masks_fixed
from .core import CalibratorParams, apply_calibrator, kl_divergence, predict_class, softmax
from .errors import ContractError
from .fit import CalibratorEnsemble


@dataclass(frozen=True, eq=False)
class PredictablePipeline:
    """A frozen model, an optional calibrator, and the ablation policy used to probe it.

    With an ensemble attached, every row is calibrated by the member whose
    rate is nearest that row's realized ablation rate, so the pipeline is a
    drop-in replacement for the bare model inside any perturbation method.
    """

    model: object
    calibrator: CalibratorParams | CalibratorEnsemble | None = None
    policy: AblationPolicy = field(default_factory=AblationPolicy.zero)

    def __post_init__(self):
        if self.calibrator is not None and self.calibrator.m != self.model.m:
            raise ContractError(f"calibrator has m={self.calibrator.m}, model has m={self.model.m}")

    @property
    def m(self) -> int:
        return self.model.m

    def n_units(self, n: int) -> int:
        return self.policy.n_units(n)

    def calibrate(self, z: np.ndarray, rates=None) -> np.ndarray:
        cal = self.calibrator
        if cal is None:
            return z
        if isinstance(cal, CalibratorParams):
            return apply_calibrator(cal, z)
        if len(cal) == 0:
            if cal.unconditioned is None:
                raise ContractError("ensemble is empty")
            return apply_calibrator(cal.unconditioned, z)
        z = np.atleast_2d(z)
        rates = np.zeros(len(z)) if rates is None else np.broadcast_to(np.asarray(rates, dtype=np.float64), (len(z),))
        which = np.array([cal.select_index(r) for r in rates], dtype=np.intp)
        out = np.empty_like(z)
        for j in np.unique(which):
            rows = which == j
            out[rows] = apply_calibrator(cal.entries[j][1], z[rows])
        return out

    def logits(self, X, rates=None) -> np.ndarray:
        """Calibrated logits for inputs ablated at ``rates`` (0 when omitted)."""
        return self.calibrate(self.model.logits(X), rates)

    def masked_logits(self, X, masks) -> np.ndarray:
        """Ablate ``X`` with unit-level ``masks`` per the policy, then evaluate."""
        masks = np.atleast_2d(np.asarray(masks, dtype=bool))
        X = np.asarray(X, dtype=np.float64)
        Xa = apply_ablation(X, masks, self.policy)
        return self.logits(np.atleast_2d(Xa), masks.mean(axis=1))

    def masked_proba(self, X, masks) -> np.ndarray:
        return softmax(self.masked_logits(X, masks))

    def predict(self, X, rates=None) -> np.ndarray:
        return predict_class(self.logits(X, rates))


def class_frequency(preds, m: int) -> np.ndarray:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    if preds.size == 0:
        raise ContractError("no predictions")
    if np.any((preds < 0) | (preds >= m)):
        raise ContractError(f"prediction outside [0, {m})")
    return np.bincount(preds, minlength=m) / preds.size


def reference_frequency(model, X) -> np.ndarray:
    """Clean-input class frequencies of the *uncalibrated* model (the fixed anchor)."""
    return class_frequency(predict_class(model.logits(X)), model.m)


def rate_rng(seed: int, rate_index: int) -> np.random.Generator:
    """Generator used for evaluation masks at one grid position."""
    return np.random.default_rng([seed, 7, rate_index])


def ablated_predictions(pipe: PredictablePipeline, X, rate: float, ablations_per_input: int,
                        rng: np.random.Generator, bernoulli: bool = False):
    """Pipeline predictions on ablated copies of ``X``; returns (preds, row_index).

    Rate 0 (fixed-k) short-circuits to one clean evaluation per input.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ContractError("need a non-empty (N, n) input matrix")
    N, n = X.shape
    units = pipe.n_units(n)
    if not bernoulli and quantize_rate(rate, units) == 0:
        return pipe.predict(X), np.arange(N)
    total = N * ablations_per_input
    if bernoulli:
        masks = sample_masks_bernoulli(total, units, rate, rng)
    else:
        masks = sample_masks_fixed(total, units, quantize_rate(rate, units), rng)
    rows = np.repeat(np.arange(N), ablations_per_input)
    return predict_class(pipe.masked_logits(X[rows], masks)), rows


def missingness_bias(pipe: PredictablePipeline, X, rate: float, ablations_per_input: int = 8,
                     rng: np.random.Generator | None = None, eps: float = 1e-9,
                     reference=None, bernoulli: bool = False) -> float:
    """KL(class frequencies on ablated inputs || base-model frequencies on clean inputs), nats."""
    rng = rng if rng is not None else np.random.default_rng(0)
    if reference is None:
        reference = reference_frequency(pipe.model, X)
    preds, _ = ablated_predictions(pipe, X, rate, ablations_per_input, rng, bernoulli)
    return kl_divergence(class_frequency(preds, pipe.m), reference, eps)


@dataclass(frozen=True)
class RatePoint:
    rate: float
    bias: float
    accuracy: float


@dataclass(frozen=True)
class BiasReport:
    per_rate: tuple[RatePoint, ...]

    @property
    def mean_bias(self) -> float:
        return float(np.mean([p.bias for p in self.per_rate]))

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([p.accuracy for p in self.per_rate]))


def accuracy_vs_rate(pipe: PredictablePipeline, X, y, grid, ablations_per_input: int = 8,
                     seed: int = 0, eps: float = 1e-9, reference=None) -> BiasReport:
    """Ground-truth accuracy and missingness bias at each grid rate.

    Masks at grid position ``i`` come from :func:`rate_rng` ``(seed, i)``, so
    pipelines evaluated with the same seed see identical ablations.  The
    bias anchor defaults to ``pipe.model``'s clean frequencies; pass the base
    model's when comparing a retrained model against it.
    """
    grid = [float(r) for r in grid]
    if not grid:
        raise ContractError("empty rate grid")
    if sorted(set(grid)) != grid:
        raise ContractError("rate grid must be sorted and distinct")
    y = np.asarray(y)
    if reference is None:
        reference = reference_frequency(pipe.model, X)
    points = []
    for i, rate in enumerate(grid):
        preds, rows = ablated_predictions(pipe, X, rate, ablations_per_input, rate_rng(seed, i))
        bias = kl_divergence(class_frequency(preds, pipe.m), reference, eps)
        points.append(RatePoint(rate, bias, float(np.mean(preds == y[rows]))))
    return BiasReport(tuple(points))


# ---------------------------------------------------------------------------
# top-k faithfulness


def top_k_rank(alpha, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending; equal scores keep index order."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not 0 <= k <= alpha.size:
        raise ContractError(f"k={k} outside [0, {alpha.size}]")
    return [int(i) for i in np.argsort(-alpha, kind="stable")[:k]]


def _faithfulness(pipe, x, alpha, k: int, ablate_top: bool) -> float:
    x = np.asarray(x, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    units = pipe.n_units(x.shape[-1])
    if alpha.shape != (units,):
        raise ContractError(f"attribution has {alpha.size} entries, expected {units}")
    if not 0 <= k <= units:
        raise ContractError(f"k={k} outside [0, {units}]")
    clean = pipe.masked_proba(x, np.zeros((1, units), dtype=bool))[0]
    y_hat = int(np.argmax(clean))
    top = top_k_rank(alpha, k)
    mask = np.zeros(units, dtype=bool)
    if ablate_top:
        mask[top] = True
    else:
        mask[:] = True
        mask[top] = False
    if not mask.any():
        # nothing ablated: the perturbed input is x itself
        return 0.0
    perturbed = pipe.masked_proba(x, mask[None, :])[0]
    return float(clean[y_hat] - perturbed[y_hat])


def sufficiency(pipe, x, alpha, k: int) -> float:
    """Drop in predicted-class probability when only the top-k units are kept."""
    return _faithfulness(pipe, x, alpha, k, ablate_top=False)


def sensitivity(pipe, x, alpha, k: int) -> float:
    """Drop in predicted-class probability when the top-k units are ablated."""
    return _faithfulness(pipe, x, alpha, k, ablate_top=True)
