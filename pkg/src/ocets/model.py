"""Decomposition-linear forecaster with a K-way ordinal softmax head.

Shapes: a lookback batch is (..., w, M); the point forecast is (..., H, M);
bin logits and probabilities are (..., H, M, K).  The trend/seasonal
projections are shared by all channels.  The head maps each scalar point
forecast to K logits with one weight vector shared across channels
(``head="shared"``); ``head="joint"`` applies a K x M matrix to the whole
M-vector of a step and yields a single distribution per step, which every
channel then shares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidDimension, InvalidParameter, SchemaError
from .numerics import softmax

HEADS = ("shared", "joint")
CHECKPOINT_FORMAT = "ocets-params"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelParams:
    w_t: np.ndarray  # (H, w)
    w_s: np.ndarray  # (H, w)
    w_o: np.ndarray  # (K,) shared head, (K, M) joint head
    b_o: np.ndarray  # (K,)
    ma_window: int
    m: int
    head: str = "shared"

    def __post_init__(self):
        if self.w_t.shape != self.w_s.shape or self.w_t.ndim != 2:
            raise InvalidDimension("trend and seasonal projections must share an H x w shape")
        want = (self.k,) if self.head == "shared" else (self.k, self.m)
        if self.w_o.shape != want:
            raise InvalidDimension(f"head weight must have shape {want}, got {self.w_o.shape}")
        _check_ma_window(self.ma_window, self.w)

    @property
    def h(self) -> int:
        return self.w_t.shape[0]

    @property
    def w(self) -> int:
        return self.w_t.shape[1]

    @property
    def k(self) -> int:
        return self.b_o.shape[0]

    @property
    def n_params(self) -> int:
        return 2 * self.w_t.size + self.w_o.size + self.k


@dataclass(frozen=True)
class Forecast:
    point: np.ndarray  # (..., H, M), normalized space
    logits: np.ndarray  # (..., H, M, K)
    probs: np.ndarray  # (..., H, M, K)


def _check_ma_window(ma_window: int, w: int) -> None:
    if ma_window < 1 or ma_window % 2 == 0:
        raise InvalidParameter(f"moving-average window must be a positive odd count, got {ma_window}")
    if ma_window > w:
        raise InvalidParameter(f"moving-average window {ma_window} exceeds lookback {w}")


def init_params(
    w: int,
    h: int,
    m: int,
    k: int,
    ma_window: int,
    rng: np.random.Generator,
    head: str = "shared",
    jitter: float = 1e-2,
) -> ModelParams:
    """Projections start at the lookback mean (1/w) plus uniform jitter."""
    if min(w, h, m, k) < 1:
        raise InvalidParameter("shape arguments must be >= 1")
    if head not in HEADS:
        raise InvalidParameter(f"unknown head {head!r}; expected one of {HEADS}")
    _check_ma_window(ma_window, w)
    w_t = 1.0 / w + rng.uniform(-jitter, jitter, (h, w))
    w_s = 1.0 / w + rng.uniform(-jitter, jitter, (h, w))
    bound = 1.0 / np.sqrt(k)
    w_o = rng.uniform(-bound, bound, (k,) if head == "shared" else (k, m))
    return ModelParams(w_t, w_s, w_o, np.zeros(k), ma_window, m, head)


def decompose(x, ma_window: int) -> tuple[np.ndarray, np.ndarray]:
    """Centred moving-average trend with edge-replicated padding, and the remainder."""
    x = np.asarray(x, dtype=float)
    _check_ma_window(ma_window, x.shape[-2])
    if ma_window == 1:
        return x.copy(), np.zeros_like(x)
    half = (ma_window - 1) // 2
    pad = [(0, 0)] * x.ndim
    pad[-2] = (half, half)
    padded = np.pad(x, pad, mode="edge")
    trend = sliding_window_view(padded, ma_window, axis=-2).mean(axis=-1)
    return trend, x - trend


def project(params: ModelParams, trend: np.ndarray, seasonal: np.ndarray) -> np.ndarray:
    return np.einsum("hw,...wm->...hm", params.w_t, trend) + np.einsum(
        "hw,...wm->...hm", params.w_s, seasonal
    )


def head_logits(params: ModelParams, point: np.ndarray) -> np.ndarray:
    if params.head == "shared":
        return point[..., None] * params.w_o + params.b_o
    step = np.einsum("...hm,km->...hk", point, params.w_o) + params.b_o
    return np.broadcast_to(step[..., None, :], point.shape + (params.k,))


def forward(params: ModelParams, x_norm) -> Forecast:
    x = np.asarray(x_norm, dtype=float)
    if x.ndim < 2 or x.shape[-2] != params.w or x.shape[-1] != params.m:
        raise InvalidDimension(f"expected (..., {params.w}, {params.m}) input, got {x.shape}")
    trend, seasonal = decompose(x, params.ma_window)
    return forward_decomposed(params, trend, seasonal)


def forward_decomposed(params: ModelParams, trend, seasonal) -> Forecast:
    point = project(params, trend, seasonal)
    logits = head_logits(params, point)
    return Forecast(point, logits, softmax(logits))


def param_vector(params: ModelParams) -> np.ndarray:
    return np.concatenate(
        [params.w_t.ravel(), params.w_s.ravel(), params.w_o.ravel(), params.b_o.ravel()]
    )


def load_param_vector(params: ModelParams, v) -> ModelParams:
    v = np.asarray(v, dtype=float)
    if v.shape != (params.n_params,):
        raise InvalidDimension(f"expected {params.n_params} parameters, got {v.shape}")
    n_proj = params.w_t.size
    n_head = params.w_o.size
    w_t = v[:n_proj].reshape(params.w_t.shape).copy()
    w_s = v[n_proj : 2 * n_proj].reshape(params.w_s.shape).copy()
    w_o = v[2 * n_proj : 2 * n_proj + n_head].reshape(params.w_o.shape).copy()
    b_o = v[2 * n_proj + n_head :].copy()
    return replace(params, w_t=w_t, w_s=w_s, w_o=w_o, b_o=b_o)


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "shape": {
            "w": params.w,
            "h": params.h,
            "m": params.m,
            "k": params.k,
            "ma_window": params.ma_window,
            "head": params.head,
        },
        "order": ["w_t", "w_s", "w_o", "b_o"],
        "params": param_vector(params).tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> ModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    s = doc["shape"]
    h, w, m, k = s["h"], s["w"], s["m"], s["k"]
    template = ModelParams(
        np.zeros((h, w)),
        np.zeros((h, w)),
        np.zeros((k,) if s["head"] == "shared" else (k, m)),
        np.zeros(k),
        s["ma_window"],
        m,
        s["head"],
    )
    return load_param_vector(template, doc["params"])
