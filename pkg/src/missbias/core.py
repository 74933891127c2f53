"""Logit-space numerical primitives.

Every function here is pure and accepts either a single vector or a batch
whose last axis indexes classes.  Probability math goes through a
max-subtracted log-sum-exp; nothing takes the log of a softmax output.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DomainError

# 1/T bounds for the temperature parametrization
TEMPERATURE_MIN = 1e-6
TEMPERATURE_MAX = 1e6


class Parametrization(str, enum.Enum):
    DENSE = "dense"
    DIAGONAL = "diagonal"
    TEMPERATURE = "temperature"


def _finite(z, name="logits") -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError(f"{name} must be finite")
    return z


def logsumexp(z) -> np.ndarray:
    """Stable ``log(sum(exp(z)))`` over the last axis.

    The maximum entry is pulled out and the remainder summed with ``log1p``
    so that nearly-saturated rows keep full relative precision.
    """
    z = _finite(z)
    top = np.argmax(z, axis=-1)
    zmax = np.take_along_axis(z, top[..., None], axis=-1)
    e = np.exp(z - zmax)
    np.put_along_axis(e, top[..., None], 0.0, axis=-1)
    return zmax[..., 0] + np.log1p(e.sum(axis=-1))


def log_softmax(z) -> np.ndarray:
    z = _finite(z)
    return z - logsumexp(z)[..., None]


def softmax(z) -> np.ndarray:
    """Map logits onto the probability simplex (last axis)."""
    z = _finite(z)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict_class(z) -> np.ndarray | int:
    """Argmax over classes; ties resolve to the lowest index."""
    z = _finite(z)
    # np.argmax returns the first occurrence of the maximum
    out = np.argmax(z, axis=-1)
    return int(out) if out.ndim == 0 else out


def one_hot(index, m: int) -> np.ndarray:
    index = np.asarray(index)
    if np.any(index < 0) or np.any(index >= m):
        raise ContractError(f"class index {index} out of range for m={m}")
    return np.eye(m)[index]


def cross_entropy(z_cal, target) -> np.ndarray | float:
    """``-log softmax(z_cal)[target]`` in nats, evaluated via log-sum-exp."""
    z = _finite(z_cal)
    target = np.asarray(target)
    m = z.shape[-1]
    if np.any(target < 0) or np.any(target >= m):
        raise ContractError(f"target {target} out of range for m={m}")
    if z.shape[:-1] != target.shape:
        raise ContractError("logits and targets disagree in batch shape")
    picked = np.take_along_axis(z, target[..., None].astype(np.intp), axis=-1)[..., 0]
    out = logsumexp(z) - picked
    return float(out) if out.ndim == 0 else out


def kl_divergence(p, q, eps: float = 1e-9) -> float:
    """KL(p || q) in nats after additive smoothing of both arguments.

    Each distribution is replaced by ``(d + eps) / (1 + m * eps)`` so that
    empty classes on the reference side keep the value finite.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ContractError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    if eps < 0:
        raise ContractError("eps must be non-negative")
    m = p.shape[0]
    ps = (p + eps) / (1.0 + m * eps)
    qs = (q + eps) / (1.0 + m * eps)
    support = ps > 0
    with np.errstate(divide="ignore"):
        terms = ps[support] * (np.log(ps[support]) - np.log(qs[support]))
    return max(0.0, float(terms.sum()))


@dataclass(frozen=True, eq=False)
class CalibratorParams:
    """Affine logit map ``z -> W z + b`` under one of three parametrizations.

    ``weight`` holds an (m, m) matrix for DENSE, the m diagonal entries for
    DIAGONAL, and the scalar inverse temperature for TEMPERATURE (whose bias
    is pinned to zero).
    """

    parametrization: Parametrization
    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        kind = Parametrization(self.parametrization)
        w = np.array(self.weight, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if b.ndim != 1 or b.shape[0] < 2:
            raise ContractError("bias must be a vector with at least 2 entries")
        m = b.shape[0]
        if kind is Parametrization.DENSE and w.shape != (m, m):
            raise ContractError(f"dense weight must be {m}x{m}, got shape {w.shape}")
        if kind is Parametrization.DIAGONAL and w.shape != (m,):
            raise ContractError(f"diagonal weight must have {m} entries, got shape {w.shape}")
        if kind is Parametrization.TEMPERATURE:
            if w.size != 1:
                raise ContractError("temperature weight must be a single scalar")
            w = w.reshape(())
            if not w > 0:
                raise ContractError("inverse temperature must be positive")
            if np.any(b != 0):
                raise ContractError("temperature calibrators carry a zero bias")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ContractError("calibrator parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "parametrization", kind)
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def m(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def identity(cls, m: int, parametrization=Parametrization.DENSE) -> CalibratorParams:
        kind = Parametrization(parametrization)
        if kind is Parametrization.DENSE:
            w = np.eye(m)
        elif kind is Parametrization.DIAGONAL:
            w = np.ones(m)
        else:
            w = np.float64(1.0)
        return cls(kind, w, np.zeros(m))

    def matrix(self) -> np.ndarray:
        """Full (m, m) weight matrix regardless of parametrization."""
        if self.parametrization is Parametrization.DENSE:
            return self.weight.copy()
        if self.parametrization is Parametrization.DIAGONAL:
            return np.diag(self.weight)
        return float(self.weight) * np.eye(self.m)

    def __eq__(self, other):
        if not isinstance(other, CalibratorParams):
            return NotImplemented
        return (
            self.parametrization is other.parametrization
            and np.array_equal(self.weight, other.weight)
            and np.array_equal(self.bias, other.bias)
        )

    __hash__ = None


def apply_calibrator(p: CalibratorParams, z) -> np.ndarray:
    """Calibrated logits ``W z + b`` for a vector or a batch of logits."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != p.m:
        raise ContractError(f"calibrator expects {p.m} classes, logits have {z.shape[-1]}")
    if p.parametrization is Parametrization.DENSE:
        return z @ p.weight.T + p.bias
    if p.parametrization is Parametrization.DIAGONAL:
        return z * p.weight + p.bias
    return z * p.weight
