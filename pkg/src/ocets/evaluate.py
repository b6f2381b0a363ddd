"""Point reconstruction from bin probabilities, error metrics, rank statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidDimension, InvalidInput, InvalidParameter
from .targetdist import BinScheme

NORMALIZATIONS = ("per_element", "per_horizon")


@dataclass(frozen=True)
class MetricPair:
    mse: float
    mae: float
    normalization: str = "per_element"


@dataclass(frozen=True)
class SignificanceConfig:
    k_algorithms: int
    n_datasets: int
    q_alpha: float

    def __post_init__(self):
        if self.k_algorithms < 2 or self.n_datasets < 1 or not self.q_alpha > 0:
            raise InvalidParameter("need k >= 2 algorithms, N >= 1 datasets and q_alpha > 0")


def reconstruct(probs, bins: BinScheme):
    """Expected bin centre under ``probs`` (last axis)."""
    probs = np.asarray(probs, dtype=float)
    if probs.shape[-1] != bins.k:
        raise InvalidDimension(f"expected {bins.k} bins, got {probs.shape[-1]}")
    out = probs @ bins.centers
    return float(out) if out.ndim == 0 else out


def _pair(y, yhat):
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise InvalidDimension(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.ndim < 2:
        raise InvalidDimension("metrics expect (..., H, M) arrays")
    return y, yhat


def mse(y, yhat, normalization: str = "per_horizon") -> float:
    """Squared error; per_horizon sums over channels and divides by H only.

    Leading window axes are averaged in both modes.
    """
    y, yhat = _pair(y, yhat)
    sq = (y - yhat) ** 2
    return _reduce(sq, normalization)


def mae(y, yhat, normalization: str = "per_horizon") -> float:
    y, yhat = _pair(y, yhat)
    return _reduce(np.abs(y - yhat), normalization)


def _reduce(err: np.ndarray, normalization: str) -> float:
    if normalization == "per_element":
        return float(err.mean())
    if normalization == "per_horizon":
        return float(err.sum(axis=-1).mean())
    raise InvalidParameter(f"unknown normalization {normalization!r}; expected one of {NORMALIZATIONS}")


def metrics(y, yhat, normalization: str = "per_element") -> MetricPair:
    return MetricPair(mse(y, yhat, normalization), mae(y, yhat, normalization), normalization)


def persistence_forecast(lookback, h: int) -> np.ndarray:
    """Repeat the last observed row of each lookback for ``h`` steps."""
    lookback = np.asarray(lookback, dtype=float)
    last = lookback[..., -1:, :]
    return np.repeat(last, h, axis=-2)


def nemenyi_cd(cfg: SignificanceConfig) -> float:
    k, n = cfg.k_algorithms, cfg.n_datasets
    return cfg.q_alpha * math.sqrt(k * (k + 1) / (6.0 * n))


def rank_table(scores, lower_is_better: bool = True) -> np.ndarray:
    """Average rank of each algorithm (rows) across datasets (columns).

    Ties share the mean of the ranks they span.
    """
    s = np.asarray(scores, dtype=float)
    if s.ndim != 2 or s.size == 0:
        raise InvalidDimension(f"score matrix must be algorithms x datasets, got {s.shape}")
    if np.isnan(s).any():
        raise InvalidInput("score matrix contains NaN")
    keyed = s if lower_is_better else -s
    ranks = rankdata(keyed, method="average", axis=0)
    return ranks.mean(axis=1)
