"""Cross-entropy and ordinal cross-entropy over bin distributions.

Probability vectors live on the last axis; every function broadcasts over
any leading batch axes.  Training uses natural logs; ``base="base10"``
reports values in decimal logs.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidDimension, InvalidParameter
from .numerics import softmax

FLOOR = 1e-12
KINDS = ("oce", "ce")
_LOG_SCALE = {"natural": 1.0, "base10": 1.0 / math.log(10.0)}


def _log_scale(base: str) -> float:
    try:
        return _LOG_SCALE[base]
    except KeyError:
        raise InvalidParameter(f"unknown log base {base!r}") from None


def _pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1:] != q.shape[-1:]:
        raise InvalidDimension(f"bin counts differ: {p.shape[-1]} vs {q.shape[-1]}")
    return p, q


def _check_floor(floor: float, k: int) -> None:
    if not 0 < floor < 1.0 / k:
        raise InvalidParameter(f"probability floor must lie in (0, 1/K), got {floor}")


def ce(p, q, base: str = "natural", floor: float = FLOOR):
    """-sum_k p_k log max(q_k, floor)."""
    p, q = _pair(p, q)
    _check_floor(floor, q.shape[-1])
    out = -np.sum(p * np.log(np.maximum(q, floor)), axis=-1) * _log_scale(base)
    return float(out) if out.ndim == 0 else out


def cumsum_head(q, floor: float = FLOOR) -> np.ndarray:
    """P(Y <= k) for k = 1..K-1, clamped into [floor, 1 - floor]."""
    q = np.asarray(q, dtype=float)
    if q.shape[-1] < 2:
        raise InvalidDimension("cumulative head needs K >= 2")
    return np.clip(np.cumsum(q, axis=-1)[..., :-1], floor, 1.0 - floor)


def _tail_head(q, floor: float) -> np.ndarray:
    # P(Y > k) summed from the top so small upper tails keep full precision
    tail = np.cumsum(q[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    return np.clip(tail, floor, 1.0 - floor)


def _true_cumulatives(p):
    below = np.cumsum(p, axis=-1)[..., :-1]
    above = np.cumsum(p[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    return below, above


def oce(p, q, base: str = "natural", floor: float = FLOOR):
    """Binary cross-entropy summed over the K-1 ordinal thresholds.

    ``p`` may be soft (a full distribution) or one-hot.
    """
    p, q = _pair(p, q)
    if q.shape[-1] < 2:
        raise InvalidDimension("ordinal loss needs K >= 2")
    _check_floor(floor, q.shape[-1])
    below, above = _true_cumulatives(p)
    out = -np.sum(
        below * np.log(cumsum_head(q, floor)) + above * np.log(_tail_head(q, floor)),
        axis=-1,
    )
    out = out * _log_scale(base)
    return float(out) if out.ndim == 0 else out


def oce_self_entropy(p) -> np.ndarray:
    """Minimum of oce(p, .) over q: summed binary entropies of p's cumulatives."""
    below, above = _true_cumulatives(np.asarray(p, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(below > 0, below * np.log(below), 0.0) + np.where(above > 0, above * np.log(above), 0.0))
    return h.sum(axis=-1)


def _softmax_backward(q, g):
    return q * (g - np.sum(q * g, axis=-1, keepdims=True))


def oce_grad_q(p, q, floor: float = FLOOR) -> np.ndarray:
    """d oce / d q (natural log), zero through clamped thresholds."""
    p, q = _pair(p, q)
    below, above = _true_cumulatives(p)
    c = np.cumsum(q, axis=-1)[..., :-1]
    s = np.cumsum(q[..., ::-1], axis=-1)[..., ::-1][..., 1:]
    live_c = (c > floor) & (c < 1.0 - floor)
    live_s = (s > floor) & (s < 1.0 - floor)
    gc = np.where(live_c, -below / np.clip(c, floor, 1.0), 0.0)
    gs = np.where(live_s, -above / np.clip(s, floor, 1.0), 0.0)
    zeros = np.zeros(gc.shape[:-1] + (1,))
    # q_i enters P(<=k) for k >= i and P(>k) for k < i
    from_below = np.cumsum(np.concatenate([gc, zeros], axis=-1)[..., ::-1], axis=-1)[..., ::-1]
    from_above = np.concatenate([zeros, np.cumsum(gs, axis=-1)], axis=-1)
    return from_below + from_above


def oce_grad_logits(p, logits, floor: float = FLOOR) -> np.ndarray:
    """Gradient of oce(p, softmax(logits)) with respect to the logits."""
    q = softmax(logits)
    return _softmax_backward(q, oce_grad_q(p, q, floor))


def ce_grad_logits(p, logits, floor: float = FLOOR) -> np.ndarray:
    q = softmax(logits)
    p, q = _pair(p, q)
    g = np.where(q > floor, -p / np.maximum(q, floor), 0.0)
    return _softmax_backward(q, g)


def loss_and_grad(kind: str, p, logits, floor: float = FLOOR):
    """Per-item loss values and logit gradients for ``kind`` in {"oce", "ce"}."""
    q = softmax(logits)
    if kind == "oce":
        return oce(p, q, floor=floor), _softmax_backward(q, oce_grad_q(p, q, floor))
    if kind == "ce":
        return ce(p, q, floor=floor), ce_grad_logits(p, logits, floor)
    raise InvalidParameter(f"unknown loss kind {kind!r}; expected one of {KINDS}")


def batch_objective(targets, predictions, kind: str = "oce", floor: float = FLOOR) -> float:
    """Mean loss over every (sample, step, channel) cell."""
    targets = np.asarray(targets, dtype=float)
    predictions = np.asarray(predictions, dtype=float)
    if targets.shape != predictions.shape:
        raise InvalidDimension(f"grid shapes differ: {targets.shape} vs {predictions.shape}")
    fn = oce if kind == "oce" else ce if kind == "ce" else None
    if fn is None:
        raise InvalidParameter(f"unknown loss kind {kind!r}")
    return float(np.mean(fn(targets, predictions, floor=floor)))
