"""Feature masks, imputation policies, and paired clean/ablated logit datasets.

Masks live at the level of *units*: with ``group_size == 1`` a unit is a
single feature, otherwise each mask bit covers a contiguous block of
``group_size`` features (patch-style ablation).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .fit import PairedLogits


class ImputeKind(str, enum.Enum):
    ZERO = "zero"
    MEAN = "mean"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class AblationPolicy:
    kind: ImputeKind = ImputeKind.ZERO
    feature_means: np.ndarray | None = None
    baseline: np.ndarray | None = None
    group_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ImputeKind(self.kind))
        if self.group_size < 1:
            raise ContractError("group_size must be at least 1")
        if self.kind is ImputeKind.MEAN and self.feature_means is None:
            raise ContractError("mean imputation needs feature_means")
        if self.kind is ImputeKind.CUSTOM and self.baseline is None:
            raise ContractError("custom imputation needs a baseline vector")
        for name in ("feature_means", "baseline"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=np.float64)
                v.setflags(write=False)
                object.__setattr__(self, name, v)

    @classmethod
    def zero(cls, group_size: int = 1) -> AblationPolicy:
        return cls(ImputeKind.ZERO, group_size=group_size)

    @classmethod
    def mean(cls, feature_means, group_size: int = 1) -> AblationPolicy:
        return cls(ImputeKind.MEAN, feature_means=feature_means, group_size=group_size)

    @classmethod
    def custom(cls, baseline, group_size: int = 1) -> AblationPolicy:
        return cls(ImputeKind.CUSTOM, baseline=baseline, group_size=group_size)

    def fill_values(self, n: int) -> np.ndarray:
        """Replacement value for every one of ``n`` features."""
        if self.kind is ImputeKind.ZERO:
            return np.zeros(n)
        v = self.feature_means if self.kind is ImputeKind.MEAN else self.baseline
        if v.shape != (n,):
            raise ContractError(f"{self.kind.value} policy has {v.shape[0]} values, input has {n} features")
        return v

    def n_units(self, n: int) -> int:
        return math.ceil(n / self.group_size)

    def expand(self, unit_mask: np.ndarray, n: int) -> np.ndarray:
        """Feature-level mask from a unit-level one."""
        unit_mask = np.asarray(unit_mask, dtype=bool)
        if unit_mask.shape[-1] != self.n_units(n):
            raise ContractError(
                f"mask has {unit_mask.shape[-1]} entries, expected {self.n_units(n)} for {n} features"
            )
        if self.group_size == 1:
            return unit_mask
        return np.repeat(unit_mask, self.group_size, axis=-1)[..., :n]


def quantize_rate(rate: float, n_units: int) -> int:
    """Number of units to ablate for a requested rate: round-half-up of ``rate * n``."""
    if not 0 <= rate <= 1:
        raise ContractError(f"ablation rate {rate} outside [0, 1]")
    return min(n_units, int(math.floor(rate * n_units + 0.5)))


def sample_masks_fixed(count: int, n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` masks, each with exactly ``k`` of ``n`` entries set, uniform over k-subsets."""
    if not 0 <= k <= n:
        raise ContractError(f"cannot ablate {k} of {n} features")
    masks = np.zeros((count, n), dtype=bool)
    if k == 0 or count == 0:
        return masks
    # ranks of iid uniforms give a uniformly random permutation per row
    chosen = np.argsort(rng.random((count, n)), axis=1)[:, :k]
    np.put_along_axis(masks, chosen, True, axis=1)
    return masks


def sample_mask_fixed(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return sample_masks_fixed(1, n, k, rng)[0]


def sample_masks_bernoulli(count: int, n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 <= p <= 1:
        raise ContractError(f"ablation probability {p} outside [0, 1]")
    return rng.random((count, n)) < p


def sample_mask_bernoulli(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    return sample_masks_bernoulli(1, n, p, rng)[0]


def apply_ablation(x, mask, policy: AblationPolicy) -> np.ndarray:
    """Replace masked features of ``x`` (vector or batch) per ``policy``.

    ``mask`` is unit-level and broadcasts against ``x``'s leading axes.
    Unmasked coordinates are copied through untouched.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    feat = policy.expand(mask, n)
    try:
        np.broadcast_shapes(feat.shape, x.shape)
    except ValueError:
        raise ContractError(f"mask shape {feat.shape} does not match input shape {x.shape}") from None
    return np.where(feat, policy.fill_values(n), x)


def build_pair_dataset(model, X, rate: float, policy: AblationPolicy,
                       ablations_per_input: int, rng: np.random.Generator,
                       labels=None, bernoulli: bool = False) -> PairedLogits:
    """Paired clean/ablated logits for every row of ``X``.

    Each input contributes ``ablations_per_input`` consecutive samples.  With
    ``bernoulli=False`` exactly ``round(rate * units)`` units are ablated per
    sample; with ``bernoulli=True`` each unit is ablated independently with
    probability ``rate``.  The recorded rate is the realized fraction.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ContractError("X must be a non-empty (N, n) matrix")
    if ablations_per_input < 1:
        raise ContractError("ablations_per_input must be at least 1")
    N, n = X.shape
    units = policy.n_units(n)
    total = N * ablations_per_input
    if bernoulli:
        masks = sample_masks_bernoulli(total, units, rate, rng)
    else:
        masks = sample_masks_fixed(total, units, quantize_rate(rate, units), rng)

    clean = model.logits(X)
    clean_rep = np.repeat(clean, ablations_per_input, axis=0)
    X_rep = np.repeat(X, ablations_per_input, axis=0)
    ablated = clean_rep.copy()
    touched = masks.any(axis=1)
    if touched.any():
        ablated[touched] = model.logits(apply_ablation(X_rep[touched], masks[touched], policy))
    rep_labels = None if labels is None else np.repeat(np.asarray(labels), ablations_per_input)
    return PairedLogits(clean_rep, ablated, masks.sum(axis=1) / units, rep_labels)
