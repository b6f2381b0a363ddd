"""One train/evaluate cell: table -> noise -> split -> windows -> fit -> decode -> metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import (
    FixtureSpec,
    NoiseSpec,
    NormStats,
    SeriesTable,
    denormalize,
    fit_norm,
    generate_fixture,
    inject_noise,
    load_csv,
    normalize,
    realized_snr_db,
    split,
    support_of,
    window_arrays,
)
from .evaluate import mae, metrics, mse, persistence_forecast, reconstruct
from .model import ModelParams, forward, init_params
from .numerics import make_rng
from .targetdist import BinScheme, TargetDistSpec, make_bins
from .train import TrainConfig, TrainReport, WindowSet, fit

SPLIT_NOTE = "chronological train/val/test split; 0.6/0.2/0.2 is an assumed convention"


@dataclass
class Segment:
    """Raw and normalized windows of one split segment."""

    windows: WindowSet
    x_raw: np.ndarray  # (N, w, M)
    y_raw: np.ndarray  # (N, h, M)
    stats: NormStats  # lookback statistics used to decode predictions
    origins: np.ndarray


@dataclass
class CellResult:
    metrics: dict
    report: TrainReport
    params: ModelParams
    y_true: np.ndarray
    y_pred: np.ndarray
    window_errors: np.ndarray  # (N, 2): per-window mse, mae

    @property
    def ok(self) -> bool:
        return math.isfinite(self.metrics["mse"]) and math.isfinite(self.metrics["mae"])


def load_table(cfg: ExperimentConfig) -> tuple[SeriesTable, str]:
    if cfg.data.path is None:
        fx = cfg.fixture
        spec = FixtureSpec(fx.n_rows, fx.periods, fx.amplitudes, fx.n_features, fx.offset, fx.trend, fx.noise_std)
        rng = make_rng(cfg.seed, "fixture") if fx.noise_std > 0 else None
        return generate_fixture(spec, rng), cfg.data.name or "synthetic"
    table = load_csv(cfg.data.path, cfg.data.columns, cfg.data.date_column)
    return table, cfg.data.name or Path(cfg.data.path).stem


def apply_noise(table: SeriesTable, cfg: ExperimentConfig) -> tuple[SeriesTable, list[float] | None]:
    spec = NoiseSpec(cfg.noise.snr_db, cfg.noise.seed, cfg.noise.enabled)
    if not spec.active:
        return table, None
    noisy = inject_noise(table, spec, make_rng(spec.seed, "noise"))
    return noisy, realized_snr_db(table.values, noisy.values).tolist()


def prepare_segment(
    table: SeriesTable,
    w: int,
    h: int,
    cfg: ExperimentConfig,
    global_stats: NormStats | None = None,
) -> Segment:
    d = cfg.data
    x_raw, y_raw, origins = window_arrays(table.values, w, h, d.stride)
    if d.norm_scope == "global":
        stats = global_stats
    else:
        stats = fit_norm(x_raw, d.range_mode, d.epsilon)
    lo, hi = support_of(d.range_mode)
    x_norm = normalize(x_raw, stats)
    if d.target_norm == "own":
        y_norm = normalize(y_raw, fit_norm(y_raw, d.range_mode, d.epsilon))
    else:
        y_norm = normalize(y_raw, stats)
    # horizons can leave the lookback range; the bin support is closed
    y_norm = np.clip(y_norm, lo, hi)
    return Segment(WindowSet(x_norm, y_norm, cfg.model.ma_window), x_raw, y_raw, stats, origins)


def train_config(cfg: ExperimentConfig) -> TrainConfig:
    t = cfg.train
    return TrainConfig(
        batch_size=t.batch_size,
        epochs=t.epochs,
        lr=t.lr,
        patience=t.patience if t.patience > 0 else None,
        lr_decay=t.lr_decay,
        seed=cfg.seed,
        shuffle=t.shuffle,
        cache_targets=t.cache_targets,
    )


def predict(params: ModelParams, seg: Segment, bins: BinScheme, chunk: int = 256) -> np.ndarray:
    """Denormalized point forecasts for every window of ``seg``."""
    out = np.empty_like(seg.y_raw)
    for start in range(0, len(seg.x_raw), chunk):
        sl = slice(start, start + chunk)
        fc = forward(params, seg.windows.x_norm[sl])
        y_hat_norm = reconstruct(fc.probs, bins)
        stats = seg.stats
        if stats.x_min.ndim == 2:
            stats = NormStats(stats.x_min[sl], stats.x_max[sl], stats.range_mode, stats.epsilon)
        out[sl] = denormalize(y_hat_norm, stats)
    return out


def run_cell(
    cfg: ExperimentConfig,
    lookback: int,
    horizon: int,
    table: SeriesTable | None = None,
    dataset: str | None = None,
    on_epoch=None,
) -> CellResult:
    """Train one model for (lookback, horizon) and score it on the test segment."""
    if table is None:
        table, dataset = load_table(cfg)
    clean = table
    table, snr = apply_noise(table, cfg)
    train_t, val_t, test_t = split(table, cfg.data.split)

    global_stats = None
    if cfg.data.norm_scope == "global":
        global_stats = fit_norm(train_t.values, cfg.data.range_mode, cfg.data.epsilon)
    train_seg = prepare_segment(train_t, lookback, horizon, cfg, global_stats)
    val_seg = prepare_segment(val_t, lookback, horizon, cfg, global_stats)
    test_seg = prepare_segment(test_t, lookback, horizon, cfg, global_stats)

    a, b = support_of(cfg.data.range_mode)
    bins = make_bins(cfg.tpt.k, a, b)
    spec = TargetDistSpec(cfg.tpt.family, cfg.tpt.sigma, cfg.tpt.nu)
    params = init_params(
        lookback, horizon, table.n_features, cfg.tpt.k, cfg.model.ma_window,
        make_rng(cfg.seed, "init"), cfg.model.head, cfg.model.jitter,
    )
    params, report = fit(
        params, train_seg.windows, val_seg.windows, bins, spec, train_config(cfg), cfg.loss.kind, on_epoch
    )

    y_true = test_seg.y_raw
    if snr is not None:
        # score against the clean series so noise levels stay comparable
        _, _, clean_test = split(clean, cfg.data.split)
        _, y_true, _ = window_arrays(clean_test.values, lookback, horizon, cfg.data.stride)
    y_pred = predict(params, test_seg, bins)
    naive = persistence_forecast(test_seg.x_raw, horizon)

    headline = metrics(y_true, y_pred, cfg.eval.normalization)
    sq = (y_true - y_pred) ** 2
    window_errors = np.column_stack([sq.mean(axis=(1, 2)), np.abs(y_true - y_pred).mean(axis=(1, 2))])
    doc = {
        "dataset": dataset,
        "horizon": horizon,
        "lookback": lookback,
        "loss": cfg.loss.kind,
        "tpt": {"family": cfg.tpt.family, "k": cfg.tpt.k, "sigma": cfg.tpt.sigma, "nu": cfg.tpt.nu},
        "seed": cfg.seed,
        "mse": headline.mse,
        "mae": headline.mae,
        "normalization": headline.normalization,
        "mse_per_horizon": mse(y_true, y_pred, "per_horizon"),
        "mae_per_horizon": mae(y_true, y_pred, "per_horizon"),
        "persistence_mse": mse(y_true, naive, cfg.eval.normalization),
        "persistence_mae": mae(y_true, naive, cfg.eval.normalization),
        "n_train_windows": len(train_seg.windows),
        "n_val_windows": len(val_seg.windows),
        "n_test_windows": len(test_seg.windows),
        "initial_val_loss": report.initial_val_loss,
        "best_val_loss": report.best_val_loss,
        "best_epoch": report.best_epoch,
        "epochs_run": len(report.train_losses),
        "stopped_early": report.stopped_early,
        "params_sha256": report.checksum,
        "snr_db": cfg.noise.snr_db if snr is not None else None,
        "realized_snr_db": snr,
        "assumptions": [SPLIT_NOTE, report.lr_schedule],
    }
    return CellResult(doc, report, params, y_true, y_pred, window_errors)
