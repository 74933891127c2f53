"""JSON persistence for calibrators, ensembles, and desk models.

Floats are written with Python's shortest round-trip repr, so a save/load
cycle reproduces every parameter bit-for-bit.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .core import CalibratorParams, Parametrization
from .errors import CalibratorLoadError, ContractError
from .fit import CalibratorEnsemble
from .models import DeskModel

FORMAT_VERSION = 1


def _created():
    # reproducible-builds convention: only stamp a time when one is pinned
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    return int(epoch) if epoch is not None else None


def params_to_doc(p: CalibratorParams, rate: float | None = None, metadata: dict | None = None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "m": p.m,
        "parametrization": p.parametrization.value,
        "W": np.atleast_1d(p.weight).reshape(-1).tolist(),
        "b": p.bias.tolist(),
    }
    if rate is not None:
        doc["rate"] = float(rate)
    if metadata is not None:
        doc["metadata"] = metadata
    return doc


def _field(doc: dict, name: str):
    if name not in doc:
        raise CalibratorLoadError(name, "missing")
    return doc[name]


def _numbers(value, name: str, count: int) -> np.ndarray:
    if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise CalibratorLoadError(name, "expected a list of numbers")
    if len(value) != count:
        raise CalibratorLoadError(name, f"expected {count} entries, found {len(value)}")
    arr = np.array(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CalibratorLoadError(name, "entries must be finite")
    return arr


def params_from_doc(doc: dict) -> CalibratorParams:
    if not isinstance(doc, dict):
        raise CalibratorLoadError("<root>", "expected a JSON object")
    version = _field(doc, "version")
    if version != FORMAT_VERSION:
        raise CalibratorLoadError("version", f"unsupported version {version!r}")
    m = _field(doc, "m")
    if isinstance(m, bool) or not isinstance(m, int) or m < 2:
        raise CalibratorLoadError("m", "expected an integer >= 2")
    try:
        kind = Parametrization(_field(doc, "parametrization"))
    except ValueError:
        raise CalibratorLoadError("parametrization", f"unknown value {doc['parametrization']!r}") from None
    count = {Parametrization.DENSE: m * m, Parametrization.DIAGONAL: m, Parametrization.TEMPERATURE: 1}[kind]
    W = _numbers(_field(doc, "W"), "W", count)
    b = _numbers(_field(doc, "b"), "b", m)
    if kind is Parametrization.DENSE:
        W = W.reshape(m, m)
    elif kind is Parametrization.TEMPERATURE:
        W = W[0]
        if not W > 0:
            raise CalibratorLoadError("W", "inverse temperature must be positive")
        if np.any(b != 0):
            raise CalibratorLoadError("b", "temperature calibrators carry a zero bias")
    if "rate" in doc:
        r = doc["rate"]
        if isinstance(r, bool) or not isinstance(r, (int, float)) or not 0 <= r <= 1:
            raise CalibratorLoadError("rate", "expected a number in [0, 1]")
    try:
        return CalibratorParams(kind, W, b)
    except ContractError as exc:
        raise CalibratorLoadError("W", str(exc)) from None


def ensemble_to_doc(e: CalibratorEnsemble, metadata: dict | None = None) -> dict:
    doc = {
        "version": FORMAT_VERSION,
        "entries": [params_to_doc(p, rate) for rate, p in e.entries],
        "unconditioned": None if e.unconditioned is None else params_to_doc(e.unconditioned),
    }
    if metadata is not None:
        doc["metadata"] = metadata
    return doc


def ensemble_from_doc(doc: dict) -> CalibratorEnsemble:
    entries = _field(doc, "entries")
    if not isinstance(entries, list):
        raise CalibratorLoadError("entries", "expected a list")
    parsed = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "rate" not in entry:
            raise CalibratorLoadError(f"entries[{i}].rate", "missing")
        parsed.append((float(entry["rate"]), params_from_doc(entry)))
    unc = doc.get("unconditioned")
    try:
        return CalibratorEnsemble(tuple(parsed), None if unc is None else params_from_doc(unc))
    except CalibratorLoadError:
        raise
    except ContractError as exc:
        raise CalibratorLoadError("entries", str(exc)) from None


def make_metadata(seed: int | None = None, config_hash: str | None = None) -> dict:
    return {"seed": seed, "created": _created(), "config_hash": config_hash}


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_calibrator(path, calibrator, metadata: dict | None = None, rate: float | None = None) -> None:
    """Write a single calibrator or an ensemble as JSON."""
    if isinstance(calibrator, CalibratorEnsemble):
        doc = ensemble_to_doc(calibrator, metadata)
    else:
        doc = params_to_doc(calibrator, rate, metadata)
    Path(path).write_text(dumps(doc), encoding="utf-8")


def load_calibrator(path):
    """Read a calibrator document; returns CalibratorParams or CalibratorEnsemble."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibratorLoadError("<root>", f"not valid JSON ({exc})") from None
    if isinstance(doc, dict) and "entries" in doc:
        return ensemble_from_doc(doc)
    return params_from_doc(doc)


def model_to_doc(model: DeskModel) -> dict:
    return {
        "version": FORMAT_VERSION,
        "kind": model.kind.value,
        "layers": [{"W": W.tolist(), "b": b.tolist()} for W, b in model.layers],
        "input_mean": model.input_mean.tolist(),
        "input_scale": model.input_scale.tolist(),
    }


def model_from_doc(doc: dict) -> DeskModel:
    try:
        layers = tuple((np.array(layer["W"]), np.array(layer["b"])) for layer in doc["layers"])
        return DeskModel(doc["kind"], layers, np.array(doc["input_mean"]), np.array(doc["input_scale"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"invalid model document: {exc}") from None


def save_model(path, model: DeskModel) -> None:
    Path(path).write_text(dumps(model_to_doc(model)), encoding="utf-8")


def load_model(path) -> DeskModel:
    return model_from_doc(json.loads(Path(path).read_text(encoding="utf-8")))


def format_float(x: float) -> str:
    """CSV cell for a float: shortest round-trip repr, ``nan`` for missing."""
    return "nan" if math.isnan(x) else repr(float(x))
