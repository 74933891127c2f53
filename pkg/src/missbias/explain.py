"""Perturbation attributions: LIME-style surrogate, KernelSHAP, and exact Shapley.

All three explain the coalition game ``v(S)`` = probability, under the
pipeline, of the class predicted on the clean input, with every unit
outside ``S`` ablated.  Any object with ``n_units(n)`` and
``masked_proba(x, ablate_masks)`` can be explained; ``PredictablePipeline``
is the usual one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import CapacityError, ContractError, ExplainerError
from .metrics import top_k_rank

__all__ = [
    "ExplainerConfig",
    "coalition_game",
    "exact_shapley",
    "kernelshap_attribute",
    "lime_attribute",
    "shapley_kernel_weight",
    "top_k_rank",
]

EXACT_SHAPLEY_MAX_UNITS = 12


@dataclass(frozen=True)
class ExplainerConfig:
    num_samples: int = 1000
    mask_prob: float = 0.5
    kernel_width: float | None = None  # None -> 0.75 * sqrt(n)
    ridge_lambda: float = 1e-3
    seed: int = 0

    def width(self, n: int) -> float:
        return 0.75 * math.sqrt(n) if self.kernel_width is None else self.kernel_width

    def check(self, n: int) -> None:
        if self.num_samples < n + 2:
            raise ExplainerError(f"num_samples={self.num_samples} is below n + 2 = {n + 2}")
        if not 0 <= self.mask_prob <= 1:
            raise ContractError("mask_prob must lie in [0, 1]")
        if self.ridge_lambda < 0:
            raise ContractError("ridge_lambda must be non-negative")
        if not self.width(n) > 0:
            raise ContractError("kernel_width must be positive")


def coalition_game(pipe, x):
    """Return ``(n_units, value_fn)``; ``value_fn(keep)`` maps (S, n) keep-bits to v(S)."""
    x = np.asarray(x, dtype=np.float64)
    n = pipe.n_units(x.shape[-1])
    clean = pipe.masked_proba(x, np.zeros((1, n), dtype=bool))[0]
    target = int(np.argmax(clean))

    def value(keep):
        keep = np.atleast_2d(np.asarray(keep, dtype=bool))
        return pipe.masked_proba(x, ~keep)[:, target]

    return n, value


def _weighted_lstsq(A, y, w, ridge=0.0, penalize=None):
    sw = np.sqrt(w)
    Aw = A * sw[:, None]
    yw = y * sw
    if ridge > 0:
        pen = np.diag(np.sqrt(ridge) * (np.ones(A.shape[1]) if penalize is None else penalize))
        Aw = np.vstack([Aw, pen])
        yw = np.concatenate([yw, np.zeros(A.shape[1])])
    elif np.linalg.matrix_rank(Aw) < A.shape[1]:
        raise ExplainerError("regression design is rank-deficient; draw more samples")
    coef, *_ = np.linalg.lstsq(Aw, yw, rcond=None)
    return coef


def lime_attribute(pipe, x, cfg: ExplainerConfig = ExplainerConfig()) -> np.ndarray:
    """Weighted ridge regression of v on keep-bits around the all-keep vector.

    The first sample is the unperturbed input; the rest keep each unit with
    probability ``1 - mask_prob``.  Sample weights are
    ``exp(-d^2 / width^2)`` with ``d`` the fraction of ablated units.  The
    intercept is not penalized.
    """
    n, value = coalition_game(pipe, x)
    cfg.check(n)
    rng = np.random.default_rng(cfg.seed)
    keep = rng.random((cfg.num_samples, n)) >= cfg.mask_prob
    keep[0] = True
    v = value(keep)
    d = (~keep).sum(axis=1) / n
    w = np.exp(-(d ** 2) / cfg.width(n) ** 2)
    A = np.hstack([np.ones((len(keep), 1)), keep.astype(np.float64)])
    penalize = np.r_[0.0, np.ones(n)]
    coef = _weighted_lstsq(A, v, w, cfg.ridge_lambda, penalize)
    return coef[1:]


def shapley_kernel_weight(n: int, s: int) -> float:
    """Shapley-kernel weight of one coalition of size ``s`` (0 < s < n)."""
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def _kernel_coalitions(n: int, budget: int, rng: np.random.Generator):
    """Stratified coalitions with per-row regression weights.

    Sizes are visited in complementary pairs (s, n - s) from the outside in.
    A pair whose share of the remaining budget (by kernel mass) covers all of
    its coalitions is enumerated exactly and the rest of the budget moves on.
    Leftover sizes are sampled uniformly, each draw together with its
    complement.  The rows of one size carry that size's total kernel mass in
    equal parts.
    """
    mass = {s: (n - 1) / (s * (n - s)) for s in range(1, n)}  # C(n,s) times the per-coalition weight
    groups = [sorted({s, n - s}) for s in range(1, n // 2 + 1)]
    remaining = budget
    blocks = {}
    open_groups = list(groups)
    while open_groups:
        g = open_groups[0]
        need = sum(math.comb(n, s) for s in g)
        open_mass = sum(mass[s] for grp in open_groups for s in grp)
        if remaining * sum(mass[s] for s in g) / open_mass < need:
            break
        for s in g:
            block = np.zeros((math.comb(n, s), n), dtype=bool)
            for r, idx in enumerate(combinations(range(n), s)):
                block[r, list(idx)] = True
            blocks[s] = block
        remaining -= need
        open_groups.pop(0)
    if open_groups:
        open_mass = sum(mass[s] for grp in open_groups for s in grp)
        for g in open_groups:
            s = g[0]
            pairs = max(1, int(round(remaining * sum(mass[t] for t in g) / open_mass / 2)))
            order = np.argsort(rng.random((pairs, n)), axis=1)[:, :s]
            drawn = np.zeros((pairs, n), dtype=bool)
            np.put_along_axis(drawn, order, True, axis=1)
            if len(g) == 1:
                blocks[s] = np.vstack([drawn, ~drawn])
            else:
                blocks[s], blocks[n - s] = drawn, ~drawn
    rows = [blocks[s] for s in range(1, n)]
    weights = [np.full(len(blocks[s]), mass[s] / len(blocks[s])) for s in range(1, n)]
    return np.vstack(rows), np.concatenate(weights)


def kernelshap_attribute(pipe, x, cfg: ExplainerConfig = ExplainerConfig()) -> np.ndarray:
    """KernelSHAP with the efficiency constraint imposed exactly.

    The empty and full coalitions enter only through the constraint
    ``sum(alpha) = v(full) - v(empty)``; the last coordinate is eliminated
    and the remaining weighted least-squares problem solved directly.
    """
    n, value = coalition_game(pipe, x)
    if n < 2:
        raise ContractError("KernelSHAP needs at least two units")
    cfg.check(n)
    rng = np.random.default_rng(cfg.seed)
    Z, w = _kernel_coalitions(n, cfg.num_samples, rng)
    ends = value(np.vstack([np.zeros(n, dtype=bool), np.ones(n, dtype=bool)]))
    v0, v1 = float(ends[0]), float(ends[1])
    total = v1 - v0
    Zf = Z.astype(np.float64)
    y = value(Z) - v0 - Zf[:, -1] * total
    A = Zf[:, :-1] - Zf[:, [-1]]
    head = _weighted_lstsq(A, y, w)
    return np.append(head, total - head.sum())


def exact_shapley(pipe, x) -> np.ndarray:
    """Shapley values by enumerating all 2^n coalitions (n <= 12)."""
    x = np.asarray(x, dtype=np.float64)
    n = pipe.n_units(x.shape[-1])
    if n > EXACT_SHAPLEY_MAX_UNITS:
        raise CapacityError(f"exact Shapley enumeration limited to {EXACT_SHAPLEY_MAX_UNITS} units, got {n}")
    _, value = coalition_game(pipe, x)
    codes = np.arange(2 ** n)
    keep = ((codes[:, None] >> np.arange(n)) & 1).astype(bool)
    v = value(keep)
    size = keep.sum(axis=1)
    # weight of a coalition S not containing i: |S|! (n - |S| - 1)! / n!
    coef = np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) if s < n else 0.0
                     for s in range(n + 1)])
    phi = np.empty(n)
    for i in range(n):
        without = codes[~keep[:, i]]
        phi[i] = np.sum(coef[size[without]] * (v[without | (1 << i)] - v[without]))
    return phi
