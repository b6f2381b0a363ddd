"""Series ingestion, sliding windows, per-window min/max scaling, noise injection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InsufficientData, InvalidParameter, IoError, ParseError, SchemaError
from .numerics import gauss_sample

RANGE_MODES = ("zero_one", "sym_one")


@dataclass(frozen=True)
class SeriesTable:
    values: np.ndarray  # (T, M)
    feature_names: tuple[str, ...]
    timestamps: tuple[str, ...] | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise SchemaError(f"values must be T x M, got shape {v.shape}")
        if len(self.feature_names) != v.shape[1]:
            raise SchemaError("feature_names length does not match column count")
        if self.timestamps is not None and len(self.timestamps) != v.shape[0]:
            raise SchemaError("timestamps length does not match row count")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesTable":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return SeriesTable(self.values[start:stop].copy(), self.feature_names, ts)


@dataclass(frozen=True)
class TimeWindow:
    lookback: np.ndarray  # (w, M)
    horizon: np.ndarray  # (h, M)
    origin_index: int  # index of the last lookback row


@dataclass(frozen=True)
class NormStats:
    x_min: np.ndarray
    x_max: np.ndarray
    range_mode: str = "zero_one"
    epsilon: float = 1e-8

    @property
    def scale(self) -> np.ndarray:
        return self.x_max - self.x_min + self.epsilon


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float = math.inf
    seed: int = 0
    enabled: bool = True

    @property
    def active(self) -> bool:
        return self.enabled and math.isfinite(self.snr_db)


def load_csv(
    path: str | Path,
    columns: Sequence[str] | None = None,
    date_column: str | None = "date",
) -> SeriesTable:
    """Read a comma-separated file with a header row.

    ``date_column`` (if present in the header) becomes row labels; the other
    columns, or the subset named in ``columns``, must parse as floats.
    """
    path = Path(path)
    if not path.is_file():
        raise IoError(f"no such file: {path}")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    rows = [r for r in rows if r]
    if not rows:
        raise SchemaError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if len(body) < 2:
        raise SchemaError(f"{path}: need at least 2 data rows, found {len(body)}")

    date_idx = header.index(date_column) if date_column and date_column in header else None
    if columns is None:
        feat_idx = [i for i in range(len(header)) if i != date_idx]
    else:
        missing = [c for c in columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: columns not in header: {missing}")
        feat_idx = [header.index(c) for c in columns]
    if not feat_idx:
        raise SchemaError(f"{path}: no feature columns")

    values = np.empty((len(body), len(feat_idx)))
    stamps = []
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise SchemaError(
                f"{path}: row {r + 2} has {len(row)} cells, header has {len(header)}"
            )
        for j, c in enumerate(feat_idx):
            try:
                values[r, j] = float(row[c])
            except ValueError:
                raise ParseError(f"{path}: non-numeric cell {row[c]!r}", row=r + 2, col=c + 1) from None
            if not math.isfinite(values[r, j]):
                raise ParseError(f"{path}: non-finite cell {row[c]!r}", row=r + 2, col=c + 1)
        if date_idx is not None:
            stamps.append(row[date_idx])
    return SeriesTable(
        values,
        tuple(header[c] for c in feat_idx),
        tuple(stamps) if date_idx is not None else None,
    )


def window_count(n_rows: int, w: int, h: int, stride: int = 1) -> int:
    if n_rows < w + h:
        return 0
    return (n_rows - w - h) // stride + 1


def window_arrays(values: np.ndarray, w: int, h: int, stride: int = 1):
    """Stacked lookbacks (N, w, M), horizons (N, h, M) and origin indices (N,)."""
    _check_window_args(w, h, stride)
    values = np.asarray(values, dtype=float)
    n = window_count(values.shape[0], w, h, stride)
    if n == 0:
        raise InsufficientData(f"series of length {values.shape[0]} is shorter than w + h = {w + h}")
    # (T - L + 1, M, L) -> (T - L + 1, L, M)
    full = sliding_window_view(values, w + h, axis=0).transpose(0, 2, 1)[::stride][:n]
    origins = np.arange(n) * stride + w - 1
    return full[:, :w].copy(), full[:, w:].copy(), origins


def make_windows(table: SeriesTable, w: int, h: int, stride: int = 1) -> list[TimeWindow]:
    xs, ys, origins = window_arrays(table.values, w, h, stride)
    return [TimeWindow(x, y, int(t)) for x, y, t in zip(xs, ys, origins)]


def _check_window_args(w: int, h: int, stride: int) -> None:
    if w < 1 or h < 1 or stride < 1:
        raise InvalidParameter(f"w, h and stride must be >= 1 (got {w}, {h}, {stride})")


def support_of(range_mode: str) -> tuple[float, float]:
    if range_mode == "zero_one":
        return 0.0, 1.0
    if range_mode == "sym_one":
        return -1.0, 1.0
    raise InvalidParameter(f"unknown range_mode {range_mode!r}; expected one of {RANGE_MODES}")


def fit_norm(lookback, range_mode: str = "zero_one", epsilon: float = 1e-8) -> NormStats:
    """Per-feature min/max over the time axis (axis -2); works on stacked windows."""
    support_of(range_mode)
    x = np.asarray(lookback, dtype=float)
    if x.ndim < 2 or x.shape[-2] < 1:
        raise InvalidParameter("lookback needs at least one row")
    return NormStats(x.min(axis=-2), x.max(axis=-2), range_mode, epsilon)


def normalize(x, stats: NormStats) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    lo = np.expand_dims(stats.x_min, -2)
    scale = np.expand_dims(stats.scale, -2)
    unit = (x - lo) / scale
    return 2.0 * unit - 1.0 if stats.range_mode == "sym_one" else unit


def denormalize(x_norm, stats: NormStats) -> np.ndarray:
    x_norm = np.asarray(x_norm, dtype=float)
    lo = np.expand_dims(stats.x_min, -2)
    scale = np.expand_dims(stats.scale, -2)
    unit = (x_norm + 1.0) / 2.0 if stats.range_mode == "sym_one" else x_norm
    return unit * scale + lo


def signal_power(values: np.ndarray) -> np.ndarray:
    return np.mean(np.asarray(values, dtype=float) ** 2, axis=0)


def noise_variance(p_signal, snr_db: float):
    return np.asarray(p_signal, dtype=float) / 10.0 ** (snr_db / 10.0)


def inject_noise(table: SeriesTable, spec: NoiseSpec, rng: np.random.Generator) -> SeriesTable:
    """Add white Gaussian noise to every feature at the requested SNR.

    A disabled spec or an infinite SNR returns the input table object itself.
    """
    if not spec.active:
        return table
    var = noise_variance(signal_power(table.values), spec.snr_db)
    noise = np.column_stack(
        [gauss_sample(rng, 0.0, float(np.sqrt(v)), table.n_rows) for v in var]
    )
    return replace(table, values=table.values + noise)


def realized_snr_db(clean: np.ndarray, noisy: np.ndarray) -> np.ndarray:
    noise = np.asarray(noisy) - np.asarray(clean)
    return 10.0 * np.log10(signal_power(clean) / signal_power(noise))


def split_lengths(n_rows: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    if len(ratios) != 3:
        raise InvalidParameter("split needs exactly three fractions")
    if any(r <= 0 for r in ratios):
        raise InvalidParameter(f"split fractions must be positive, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidParameter(f"split fractions must sum to 1, got {sum(ratios)}")
    n_train = int(math.floor(n_rows * ratios[0] + 1e-9))
    n_val = int(math.floor(n_rows * ratios[1] + 1e-9))
    return n_train, n_val, n_rows - n_train - n_val


def split(table: SeriesTable, ratios: Sequence[float] = (0.6, 0.2, 0.2)):
    """Chronological train/val/test segments."""
    n_train, n_val, _ = split_lengths(table.n_rows, ratios)
    b1, b2 = n_train, n_train + n_val
    return table.slice(0, b1), table.slice(b1, b2), table.slice(b2, table.n_rows)


@dataclass(frozen=True)
class FixtureSpec:
    n_rows: int = 2000
    periods: tuple[float, ...] = (24.0, 37.0)
    amplitudes: tuple[float, ...] = (1.0, 0.6)
    n_features: int = 2
    offset: float = 3.0
    trend: float = 0.0
    noise_std: float = 0.0
    seed: int = 0
    phases: tuple[float, ...] = field(default=())


def generate_fixture(spec: FixtureSpec, rng: np.random.Generator | None = None) -> SeriesTable:
    """Multi-sine test series; feature j shifts each component's phase by j."""
    if len(spec.periods) != len(spec.amplitudes):
        raise InvalidParameter("periods and amplitudes must have equal length")
    t = np.arange(spec.n_rows, dtype=float)
    cols = []
    for j in range(spec.n_features):
        col = np.full(spec.n_rows, spec.offset) + spec.trend * t
        for c, (per, amp) in enumerate(zip(spec.periods, spec.amplitudes)):
            phase = spec.phases[c] if c < len(spec.phases) else 0.0
            col += amp * np.sin(2 * np.pi * t / per + phase + 0.9 * j * (c + 1))
        cols.append(col)
    values = np.column_stack(cols)
    if spec.noise_std > 0:
        if rng is None:
            raise InvalidParameter("noisy fixture needs an rng")
        values = values + rng.normal(0.0, spec.noise_std, values.shape)
    names = tuple(f"x{j}" for j in range(spec.n_features))
    stamps = tuple(str(i) for i in range(spec.n_rows))
    return SeriesTable(values, names, stamps)


def write_csv(table: SeriesTable, path: str | Path, date_column: str = "date") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        has_dates = table.timestamps is not None
        wr.writerow(([date_column] if has_dates else []) + list(table.feature_names))
        for i, row in enumerate(table.values):
            cells = [repr(float(v)) for v in row]
            wr.writerow(([table.timestamps[i]] if has_dates else []) + cells)
