"""Prediction and covariance-recovery scores."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, InvalidIntervalError


class UndefinedScoreWarning(UserWarning):
    pass


def _pair(truth, pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(truth, dtype=float).ravel()
    p = np.asarray(pred, dtype=float).ravel()
    if t.shape != p.shape:
        raise InvalidInputError(f"length mismatch: {t.size} vs {p.size}")
    return t, p


def point_scores(truth, pred) -> tuple[float, float, float]:
    """``(r2, mae, rmse)``; r2 is the squared Pearson correlation.

    A constant vector leaves r2 undefined: NaN is returned with an
    :class:`UndefinedScoreWarning`, the error measures are still valid.
    """
    t, p = _pair(truth, pred)
    if t.size < 2:
        raise InvalidInputError("need at least two scored locations")
    e = t - p
    mae = float(np.mean(np.abs(e)))
    rmse = float(math.sqrt(np.mean(e * e)))
    tc, pc = t - t.mean(), p - p.mean()
    denom = float(np.sqrt(np.dot(tc, tc) * np.dot(pc, pc)))
    if denom == 0.0:
        warnings.warn("r2 undefined for a constant vector", UndefinedScoreWarning, stacklevel=2)
        r2 = float("nan")
    else:
        r2 = min(1.0, (float(np.dot(tc, pc)) / denom) ** 2)
    return r2, mae, rmse


def crps_empirical(samples, truth: float) -> float:
    """Sample-based CRPS: ``mean|x - y| - mean|x - x'| / 2``.

    The pairwise term uses the sorted-sample identity, so cost is
    ``O(G log G)`` rather than quadratic.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    G = x.size
    if G < 2:
        raise InvalidInputError("need at least two samples")
    first = float(np.mean(np.abs(x - truth)))
    # sum_{j,k} |x_j - x_k| = 2 sum_i (2i - G + 1) x_(i)
    pair_sum = 2.0 * float(np.dot(2 * np.arange(G) - G + 1, x))
    return max(0.0, first - pair_sum / (2.0 * G * G))


def crps_mean(samples: np.ndarray, truth) -> float:
    """Average CRPS over locations; ``samples`` is ``(G, n_locations)``."""
    samples = np.asarray(samples, dtype=float)
    truth = np.asarray(truth, dtype=float).ravel()
    if samples.ndim != 2 or samples.shape[1] != truth.size:
        raise InvalidInputError("samples must be (G, n) with one truth per column")
    return float(np.mean([crps_empirical(samples[:, i], truth[i]) for i in range(truth.size)]))


def interval_scores(lower, upper, truth, alpha: float) -> tuple[float, float]:
    """Mean interval score and empirical coverage of ``[lower, upper]``."""
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    lo = np.asarray(lower, dtype=float).ravel()
    hi = np.asarray(upper, dtype=float).ravel()
    y = np.asarray(truth, dtype=float).ravel()
    if not (lo.shape == hi.shape == y.shape):
        raise InvalidInputError("lower, upper and truth must have equal lengths")
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise InvalidIntervalError(f"lower > upper at positions {bad[:10].tolist()}")
    score = (hi - lo) + (2 / alpha) * (lo - y) * (y < lo) + (2 / alpha) * (y - hi) * (y > hi)
    cvg = np.mean((lo <= y) & (y <= hi))
    return float(np.mean(score)), float(cvg)


def frobenius_distance(K, L) -> float:
    K = np.asarray(K.toarray() if hasattr(K, "toarray") else K, dtype=float)
    L = np.asarray(L.toarray() if hasattr(L, "toarray") else L, dtype=float)
    if K.shape != L.shape:
        raise InvalidInputError(f"shape mismatch: {K.shape} vs {L.shape}")
    return float(np.linalg.norm(K - L, "fro"))


@dataclass(frozen=True)
class ScoreCard:
    r2: float
    mae: float
    rmse: float
    crps: float
    int_score: float
    cvg: float
    alpha: float
    n_scored: int

    def to_dict(self) -> dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v)
                for k, v in asdict(self).items()}

    def write_json(self, path, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def score_predictions(truth, point, samples, lower, upper, alpha: float) -> ScoreCard:
    r2, mae, rmse = point_scores(truth, point)
    int_score, cvg = interval_scores(lower, upper, truth, alpha)
    return ScoreCard(r2=r2, mae=mae, rmse=rmse, crps=crps_mean(samples, truth),
                     int_score=int_score, cvg=cvg, alpha=alpha, n_scored=int(np.size(truth)))
