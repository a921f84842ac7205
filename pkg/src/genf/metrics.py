"""Point-forecast error metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from genf.errors import ContractError


@dataclass(frozen=True)
class MetricRecord:
    name: str
    value: float
    n: int
    scale_space: str = "original"


def _pair(pred, truth):
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ContractError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ContractError("metrics need at least one value")
    return p, t


def _mean(terms: np.ndarray) -> float:
    # correctly rounded sum keeps results independent of summation order
    return math.fsum(terms.tolist()) / terms.size


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    d = p - t
    return _mean(d * d)


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return _mean(np.abs(p - t))


def smape(pred, truth) -> float:
    """Symmetric MAPE in percent, range [0, 200].

    Terms where both prediction and truth are zero contribute 0.
    """
    p, t = _pair(pred, truth)
    denom = np.abs(p) + np.abs(t)
    num = 2.0 * np.abs(p - t)
    terms = np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)
    return 100.0 * _mean(terms)


METRICS = {"mse": mse, "mae": mae, "smape": smape}


def evaluate(pred, truth, scale_space: str = "original") -> dict[str, MetricRecord]:
    n = np.asarray(truth).size
    return {name: MetricRecord(name, fn(pred, truth), n, scale_space) for name, fn in METRICS.items()}
