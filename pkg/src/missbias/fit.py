"""Fitting affine calibrators on paired clean/ablated logits.

The objective is the mean cross-entropy between calibrated ablated logits
and the base model's one-hot clean prediction, optionally plus
``l2_lambda * (||W - I||_F^2 + ||b||^2)``.  It is convex in (W, b), so
full-batch Adam from any start lands on the same optimum value.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core import (
    TEMPERATURE_MAX,
    TEMPERATURE_MIN,
    CalibratorParams,
    Parametrization,
    apply_calibrator,
    cross_entropy,
    predict_class,
)
from .errors import ContractError, OptimizationDiverged
from .optim import Adam


@dataclass(frozen=True)
class PairedLogitSample:
    clean_logits: np.ndarray
    ablated_logits: np.ndarray
    ablation_rate: float
    clean_label: int | None = None


class PairedLogits:
    """Column-oriented batch of :class:`PairedLogitSample` records."""

    def __init__(self, clean, ablated, rates, labels=None):
        self.clean = np.asarray(clean, dtype=np.float64)
        self.ablated = np.asarray(ablated, dtype=np.float64)
        self.rates = np.broadcast_to(np.asarray(rates, dtype=np.float64), (len(self.clean),)).copy()
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int64)
        if self.clean.ndim != 2 or self.clean.shape != self.ablated.shape:
            raise ContractError("clean and ablated logits must be matching (N, m) arrays")
        if self.clean.shape[1] < 2:
            raise ContractError("need at least two classes")
        if np.any((self.rates < 0) | (self.rates > 1)):
            raise ContractError("ablation rates must lie in [0, 1]")
        if self.labels is not None and self.labels.shape != (len(self.clean),):
            raise ContractError("labels must have one entry per sample")

    @classmethod
    def from_samples(cls, samples: Sequence[PairedLogitSample]) -> PairedLogits:
        if not samples:
            raise ContractError("no samples")
        labels = [s.clean_label for s in samples]
        return cls(
            [s.clean_logits for s in samples],
            [s.ablated_logits for s in samples],
            [s.ablation_rate for s in samples],
            None if any(lab is None for lab in labels) else labels,
        )

    def __len__(self):
        return len(self.clean)

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return PairedLogits(self.clean[i], self.ablated[i], self.rates[i],
                                None if self.labels is None else self.labels[i])
        return PairedLogitSample(self.clean[i], self.ablated[i], float(self.rates[i]),
                                 None if self.labels is None else int(self.labels[i]))

    @property
    def m(self) -> int:
        return self.clean.shape[1]

    def targets(self) -> np.ndarray:
        """One-hot clean predictions of the base model, as class indices."""
        return predict_class(self.clean)

    def concat(self, other: PairedLogits) -> PairedLogits:
        labels = None
        if self.labels is not None and other.labels is not None:
            labels = np.concatenate([self.labels, other.labels])
        return PairedLogits(np.concatenate([self.clean, other.clean]),
                            np.concatenate([self.ablated, other.ablated]),
                            np.concatenate([self.rates, other.rates]), labels)


def _as_pairs(data) -> PairedLogits:
    if isinstance(data, PairedLogits):
        pairs = data
    else:
        pairs = PairedLogits.from_samples(list(data))
    if len(pairs) == 0:
        raise ContractError("empty dataset")
    return pairs


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 1e-3
    steps: int = 5000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_lambda: float = 0.0
    parametrization: Parametrization = Parametrization.DENSE
    seed: int = 0
    # std of a Gaussian perturbation added to the identity start; 0 keeps W = I, b = 0
    init_noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "parametrization", Parametrization(self.parametrization))
        if not self.learning_rate > 0:
            raise ContractError("learning_rate must be positive")
        if self.steps < 1:
            raise ContractError("steps must be at least 1")
        if self.l2_lambda < 0:
            raise ContractError("l2_lambda must be non-negative")
        if self.init_noise < 0:
            raise ContractError("init_noise must be non-negative")


class Gradient(NamedTuple):
    weight: np.ndarray
    bias: np.ndarray


def _penalty(p: CalibratorParams) -> float:
    return float(np.sum((p.matrix() - np.eye(p.m)) ** 2) + np.sum(p.bias ** 2))


def objective(p: CalibratorParams, data, l2_lambda: float = 0.0) -> float:
    pairs = _as_pairs(data)
    if pairs.m != p.m:
        raise ContractError(f"calibrator has m={p.m}, data has m={pairs.m}")
    ce = cross_entropy(apply_calibrator(p, pairs.ablated), pairs.targets())
    return float(np.mean(ce)) + l2_lambda * _penalty(p)


def gradient(p: CalibratorParams, data, l2_lambda: float = 0.0) -> Gradient:
    """Analytic gradient of :func:`objective` in the shape of ``p``'s fields."""
    pairs = _as_pairs(data)
    if pairs.m != p.m:
        raise ContractError(f"calibrator has m={p.m}, data has m={pairs.m}")
    z = pairs.ablated
    zc = apply_calibrator(p, z)
    e = np.exp(zc - zc.max(axis=1, keepdims=True))
    resid = e / e.sum(axis=1, keepdims=True)
    resid[np.arange(len(z)), pairs.targets()] -= 1.0
    resid /= len(z)

    kind = p.parametrization
    if kind is Parametrization.DENSE:
        gw = resid.T @ z + 2 * l2_lambda * (p.weight - np.eye(p.m))
    elif kind is Parametrization.DIAGONAL:
        gw = np.sum(resid * z, axis=0) + 2 * l2_lambda * (p.weight - 1.0)
    else:
        gw = np.float64(np.sum(resid * z) + 2 * l2_lambda * p.m * (float(p.weight) - 1.0))
    if kind is Parametrization.TEMPERATURE:
        gb = np.zeros(p.m)
    else:
        gb = resid.sum(axis=0) + 2 * l2_lambda * p.bias
    return Gradient(gw, gb)


# ---------------------------------------------------------------------------
# optimizer loop


def _initial_params(kind: Parametrization, m: int, cfg: FitConfig, init: CalibratorParams | None):
    if init is not None:
        if init.parametrization is not kind or init.m != m:
            raise ContractError("initial params do not match the requested parametrization")
        return np.array(init.weight, dtype=np.float64), np.array(init.bias, dtype=np.float64)
    start = CalibratorParams.identity(m, kind)
    w, b = np.array(start.weight), np.array(start.bias)
    if cfg.init_noise > 0:
        rng = np.random.default_rng(cfg.seed)
        w = w + cfg.init_noise * rng.standard_normal(w.shape)
        if kind is Parametrization.TEMPERATURE:
            w = np.clip(np.abs(w), TEMPERATURE_MIN, TEMPERATURE_MAX)
        else:
            b = b + cfg.init_noise * rng.standard_normal(m)
    return w, b


def _adam_fit(pairs: PairedLogits, cfg: FitConfig, w: np.ndarray, b: np.ndarray):
    """Full-batch Adam on the calibration objective; returns (w, b, trace).

    Works on class-major (m, N) arrays: reductions over the short class axis
    are then elementwise across rows, which is several times faster.
    """
    kind = cfg.parametrization
    Z = pairs.ablated
    N, m = Z.shape
    ZT = np.ascontiguousarray(Z.T)
    target_flat = pairs.targets() * N + np.arange(N)
    inv_n = 1.0 / N
    lam = cfg.l2_lambda
    eye = np.eye(m)
    has_bias = kind is not Parametrization.TEMPERATURE

    # temperature is held as a 1-vector so Adam can update it in place
    params = {"w": np.array(w, dtype=np.float64).reshape(-1 if kind is Parametrization.TEMPERATURE else np.shape(w))}
    if has_bias:
        params["b"] = np.array(b, dtype=np.float64)
    bias = params.get("b", np.zeros(m))
    opt = Adam(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    trace = np.empty(cfg.steps)

    for step in range(cfg.steps):
        W = params["w"]
        if kind is Parametrization.DENSE:
            zc = W @ ZT
            zc += bias[:, None]
        elif kind is Parametrization.DIAGONAL:
            zc = ZT * W[:, None]
            zc += bias[:, None]
        else:
            zc = ZT * W[0]
        zc -= zc.max(axis=0)
        e = np.exp(zc)
        se = e.sum(axis=0)
        loss = (np.log(se).sum() - zc.ravel()[target_flat].sum()) * inv_n
        e /= se
        e.ravel()[target_flat] -= 1.0
        e *= inv_n
        if kind is Parametrization.DENSE:
            gw = e @ Z
        elif kind is Parametrization.DIAGONAL:
            gw = (e * ZT).sum(axis=1)
        else:
            gw = np.array([np.vdot(e, ZT)])
        if lam:
            if kind is Parametrization.DENSE:
                dev = W - eye
                loss += lam * (np.sum(dev * dev) + bias @ bias)
            elif kind is Parametrization.DIAGONAL:
                dev = W - 1.0
                loss += lam * (dev @ dev + bias @ bias)
            else:
                dev = m * (W - 1.0)
                loss += lam * m * float((W[0] - 1.0) ** 2)
            gw = gw + 2 * lam * dev
        if not np.isfinite(loss):
            raise OptimizationDiverged(step, float(loss))
        trace[step] = loss
        grads = {"w": gw}
        if has_bias:
            gb = e.sum(axis=1)
            if lam:
                gb += 2 * lam * bias
            grads["b"] = gb
        opt.step(grads)
        if kind is Parametrization.TEMPERATURE:
            np.clip(params["w"], TEMPERATURE_MIN, TEMPERATURE_MAX, out=params["w"])

    w_out = params["w"][0] if kind is Parametrization.TEMPERATURE else params["w"]
    return w_out, bias, trace


def _fit(pairs: PairedLogits, cfg: FitConfig, init: CalibratorParams | None):
    kind = cfg.parametrization
    w0, b0 = _initial_params(kind, pairs.m, cfg, init)
    w, b, trace = _adam_fit(pairs, cfg, w0, b0)
    return CalibratorParams(kind, w, b), trace


def fit_calibrator(data, cfg: FitConfig = FitConfig(), init: CalibratorParams | None = None):
    """Fit one calibrator by full-batch Adam.

    Starts from the identity map (optionally perturbed by ``cfg.init_noise``)
    unless ``init`` is given.  Returns ``(params, loss_trace)`` where the
    trace holds the objective before each of the ``cfg.steps`` updates.
    """
    pairs = _as_pairs(data)
    params, trace = _fit(pairs, cfg, init)
    return params, trace.tolist()


def fit_multistart(data, cfg: FitConfig, inits: Sequence[CalibratorParams]):
    """Fit the same dataset from each of ``inits``; returns a list of (params, trace)."""
    pairs = _as_pairs(data)
    return [_fit(pairs, cfg, init) for init in inits]


@dataclass(frozen=True)
class CalibratorEnsemble:
    """Calibrators indexed by the ablation rate they were fitted at."""

    entries: tuple[tuple[float, CalibratorParams], ...] = ()
    unconditioned: CalibratorParams | None = None

    def __post_init__(self):
        entries = tuple((float(r), p) for r, p in self.entries)
        object.__setattr__(self, "entries", entries)
        rates = [r for r, _ in entries]
        if any(not 0 <= r <= 1 for r in rates):
            raise ContractError("ensemble rates must lie in [0, 1]")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ContractError("ensemble rates must be strictly increasing")
        ms = {p.m for _, p in entries}
        if self.unconditioned is not None:
            ms.add(self.unconditioned.m)
        if len(ms) > 1:
            raise ContractError("ensemble members disagree on the class count")

    @property
    def rates(self) -> list[float]:
        return [r for r, _ in self.entries]

    @property
    def m(self) -> int:
        if self.entries:
            return self.entries[0][1].m
        if self.unconditioned is not None:
            return self.unconditioned.m
        raise ContractError("empty ensemble")

    def __len__(self):
        return len(self.entries)

    def select_index(self, rate: float) -> int:
        rates = self.rates
        if not rates:
            raise ContractError("ensemble has no rate-conditioned entries")
        j = bisect.bisect_left(rates, rate)
        if j == 0:
            return 0
        if j == len(rates):
            return len(rates) - 1
        lo, hi = rates[j - 1], rates[j]
        # exact midpoint goes to the lower rate
        return j if hi - rate < rate - lo else j - 1


def select_calibrator(e: CalibratorEnsemble, rate: float) -> CalibratorParams:
    """Member fitted at the rate nearest ``rate``; midpoint ties go low."""
    return e.entries[e.select_index(rate)][1]


def fit_ensemble(data_by_rate, cfg: FitConfig = FitConfig(), unconditioned_data=None) -> CalibratorEnsemble:
    """One independent fit per rate bucket, plus an optional unconditioned member.

    Buckets are fitted in rate order; each fit sees only its own bucket.
    """
    buckets = sorted(((float(r), d) for r, d in data_by_rate), key=lambda t: t[0])
    if not buckets:
        raise ContractError("no rate buckets supplied")
    rates = [r for r, _ in buckets]
    if len(set(rates)) != len(rates):
        raise ContractError("duplicate ablation rates")
    problems = []
    for r, d in buckets:
        try:
            problems.append(_as_pairs(d))
        except ContractError:
            raise ContractError(f"rate bucket {r} is empty") from None
    fitted = [_fit(p, cfg, None)[0] for p in problems]
    uncond = None
    if unconditioned_data is not None:
        uncond, _ = fit_calibrator(unconditioned_data, cfg)
    return CalibratorEnsemble(tuple(zip(rates, fitted)), uncond)
