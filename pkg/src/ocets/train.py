"""Analytic backpropagation, Adam, and the epoch loop with early stopping."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InsufficientData, InvalidDimension, InvalidParameter
from .loss import loss_and_grad
from .model import ModelParams, decompose, forward_decomposed, load_param_vector, param_vector
from .numerics import make_rng
from .targetdist import BinScheme, TargetDistSpec, encode

LR_SCHEDULE_NOTE = "lr multiplied by lr_decay after every epoch without validation improvement (assumed schedule)"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 15
    lr: float = 0.005
    patience: int | None = 5
    lr_decay: float = 0.5
    seed: int = 0
    shuffle: bool = True
    cache_targets: bool = True

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidParameter("batch_size and epochs must be >= 1")
        if self.lr < 0:
            raise InvalidParameter(f"lr must be >= 0, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise InvalidParameter(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.patience is not None and self.patience < 1:
            raise InvalidParameter("patience must be >= 1 (or None to disable early stopping)")


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **kw)


@dataclass
class TrainReport:
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    initial_val_loss: float | None = None
    best_epoch: int = -1
    best_val_loss: float | None = None
    stopped_early: bool = False
    checksum: str = ""
    lr_schedule: str = LR_SCHEDULE_NOTE

    def records(self) -> list[dict]:
        out = []
        for i, tl in enumerate(self.train_losses):
            vl = self.val_losses[i] if i < len(self.val_losses) else None
            out.append({"epoch": i + 1, "train_loss": tl, "val_loss": vl, "lr": self.lrs[i]})
        return out


@dataclass
class WindowSet:
    """Normalized windows ready for training.

    ``y_norm`` holds targets already mapped into the bin support; ``trend`` and
    ``seasonal`` are the fixed decomposition of ``x_norm``.
    """

    x_norm: np.ndarray  # (N, w, M)
    y_norm: np.ndarray  # (N, H, M)
    ma_window: int
    trend: np.ndarray = field(init=False, repr=False)
    seasonal: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.x_norm.ndim != 3 or self.y_norm.ndim != 3 or len(self.x_norm) != len(self.y_norm):
            raise InvalidDimension("window set needs (N, w, M) inputs and (N, H, M) targets")
        self.trend, self.seasonal = decompose(self.x_norm, self.ma_window)

    def __len__(self) -> int:
        return len(self.x_norm)


def param_checksum(params: ModelParams) -> str:
    return hashlib.sha256(param_vector(params).tobytes()).hexdigest()


def _backward_decomposed(params, trend, seasonal, targets, kind):
    fc = forward_decomposed(params, trend, seasonal)
    if targets.shape != fc.probs.shape:
        raise InvalidDimension(f"target grid {targets.shape} does not match forecast {fc.probs.shape}")
    values, g = loss_and_grad(kind, targets, fc.logits)
    g = g / values.size
    h, m, k, w = params.h, params.m, params.k, params.w
    point = fc.point.reshape(-1, h, m)
    g = g.reshape(-1, h, m, k)
    if params.head == "shared":
        g_bo = g.sum(axis=(0, 1, 2))
        g_wo = point.reshape(-1) @ g.reshape(-1, k)
        g_point = g @ params.w_o
    else:
        g_step = g.sum(axis=2)  # every channel reads the same step logits
        g_bo = g_step.sum(axis=(0, 1))
        g_wo = np.einsum("nhk,nhm->km", g_step, point)
        g_point = np.einsum("nhk,km->nhm", g_step, params.w_o)
    g_wt = np.einsum("nhm,nwm->hw", g_point, trend.reshape(-1, w, m))
    g_ws = np.einsum("nhm,nwm->hw", g_point, seasonal.reshape(-1, w, m))
    grad = np.concatenate([g_wt.ravel(), g_ws.ravel(), g_wo.ravel(), g_bo])
    return float(values.mean()), grad


def backward(params: ModelParams, x_norm, target_grid, kind: str = "oce"):
    """Batch objective and its gradient in ``param_vector`` order."""
    x = np.asarray(x_norm, dtype=float)
    if x.shape[-2:] != (params.w, params.m):
        raise InvalidDimension(f"expected (..., {params.w}, {params.m}) input, got {x.shape}")
    trend, seasonal = decompose(x, params.ma_window)
    return _backward_decomposed(params, trend, seasonal, np.asarray(target_grid, dtype=float), kind)


def objective(params: ModelParams, x_norm, target_grid, kind: str = "oce") -> float:
    return backward(params, x_norm, target_grid, kind)[0]


def adam_step(state: AdamState, params: ModelParams, grad, lr: float):
    grad = np.asarray(grad, dtype=float)
    theta = param_vector(params)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise InvalidDimension("gradient, moments and parameters must have equal length")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return new_state, load_param_vector(params, theta)


def encode_targets(ws: WindowSet, bins: BinScheme, spec: TargetDistSpec, idx=None) -> np.ndarray:
    y = ws.y_norm if idx is None else ws.y_norm[idx]
    return encode(y, bins, spec)


def evaluate_objective(params, ws: WindowSet, targets, kind: str, chunk: int = 512) -> float:
    total = 0.0
    for start in range(0, len(ws), chunk):
        sl = slice(start, start + chunk)
        val, _ = _backward_decomposed(params, ws.trend[sl], ws.seasonal[sl], targets[sl], kind)
        total += val * (min(start + chunk, len(ws)) - start)
    return total / len(ws)


def fit(
    params: ModelParams,
    train: WindowSet,
    val: WindowSet | None,
    bins: BinScheme,
    spec: TargetDistSpec,
    cfg: TrainConfig,
    kind: str = "oce",
    on_epoch: Callable[[int, ModelParams, TrainReport], None] | None = None,
):
    """Minibatch Adam with validation-driven lr decay and early stopping.

    Returns the parameters of the best validation epoch (the last epoch when no
    validation windows are given) and the training report.
    """
    if len(train) == 0:
        raise InsufficientData("training set has no windows")
    has_val = val is not None and len(val) > 0
    rng = make_rng(cfg.seed, "shuffle")
    train_targets = encode_targets(train, bins, spec) if cfg.cache_targets else None
    val_targets = encode_targets(val, bins, spec) if has_val else None

    report = TrainReport()
    state = AdamState.fresh(params.n_params)
    lr = cfg.lr
    best = params
    bad_epochs = 0
    if has_val:
        report.initial_val_loss = evaluate_objective(params, val, val_targets, kind)

    n = len(train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            tgt = train_targets[idx] if train_targets is not None else encode_targets(train, bins, spec, idx)
            loss, grad = _backward_decomposed(params, train.trend[idx], train.seasonal[idx], tgt, kind)
            running += loss * len(idx)
            state, params = adam_step(state, params, grad, lr)
        report.train_losses.append(running / n)
        report.lrs.append(lr)

        if has_val:
            vl = evaluate_objective(params, val, val_targets, kind)
            report.val_losses.append(vl)
            if report.best_val_loss is None or vl < report.best_val_loss:
                report.best_val_loss, report.best_epoch, best = vl, epoch, params
                bad_epochs = 0
            else:
                bad_epochs += 1
                lr *= cfg.lr_decay
        else:
            report.best_epoch, best = epoch, params
        if on_epoch is not None:
            on_epoch(epoch, params, report)
        if has_val and cfg.patience is not None and bad_epochs >= cfg.patience:
            report.stopped_early = True
            break

    report.checksum = param_checksum(best)
    return best, report
