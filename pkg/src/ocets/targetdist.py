"""Map normalized scalar targets onto K ordered bins.

Each target y_c is spread over [a, b] by a truncated location-scale density
(Gaussian, Student-t or Laplace) centred on it; bin k receives the truncated
mass of [l_k, u_k).  All encoders broadcast over arrays of targets and return
an extra trailing axis of length K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ConfigError, DegenerateDistribution, InvalidParameter, OutOfSupport

FAMILIES = ("truncated_gaussian", "student_t", "laplace")
Z_FLOOR = 1e-300


@dataclass(frozen=True)
class BinScheme:
    k: int
    a: float
    b: float
    edges: np.ndarray
    centers: np.ndarray

    @property
    def delta(self) -> float:
        return (self.b - self.a) / self.k

    def index_of(self, y) -> np.ndarray:
        """Bin index of each value (the last bin is closed on the right)."""
        idx = np.floor((np.asarray(y, dtype=float) - self.a) / self.delta).astype(int)
        return np.clip(idx, 0, self.k - 1)


def make_bins(k: int, a: float, b: float) -> BinScheme:
    if k < 2:
        raise InvalidParameter(f"need at least 2 bins, got {k}")
    if not b > a:
        raise InvalidParameter(f"support must satisfy b > a, got [{a}, {b}]")
    delta = (b - a) / k
    edges = a + np.arange(k + 1) * delta
    edges[0], edges[-1] = a, b
    centers = 0.5 * (edges[:-1] + edges[1:])
    edges.setflags(write=False)
    centers.setflags(write=False)
    return BinScheme(int(k), float(a), float(b), edges, centers)


@dataclass(frozen=True)
class TargetDistSpec:
    family: str = "truncated_gaussian"
    sigma: float = 0.01
    nu: float = 5.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown tpt.family {self.family!r}; expected one of {FAMILIES}")
        if not self.sigma > 0:
            raise InvalidParameter(f"sigma must be > 0, got {self.sigma}")
        if not self.nu > 0:
            raise InvalidParameter(f"nu must be > 0, got {self.nu}")

    @property
    def laplace_scale(self) -> float:
        # matches the Laplace variance to the Gaussian's
        return self.sigma / math.sqrt(2.0)


def gaussian_cdf(z):
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def student_t_cdf(z, nu: float):
    return special.stdtr(nu, np.asarray(z, dtype=float))


def laplace_cdf(z):
    z = np.asarray(z, dtype=float)
    lower = 0.5 * np.exp(np.minimum(z, 0.0))
    return np.where(z < 0, lower, 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0)))


def _interval_mass(cdf, z_hi, z_lo):
    """cdf(z_hi) - cdf(z_lo) for a cdf symmetric about 0.

    Intervals entirely above zero are evaluated through the survival function
    so that far-tail masses keep their relative precision.
    """
    upper = z_lo >= 0
    return np.where(upper, cdf(-z_lo) - cdf(-z_hi), cdf(z_hi) - cdf(z_lo))


def _encode(y_c, bins: BinScheme, cdf, scale: float) -> np.ndarray:
    y = np.asarray(y_c, dtype=float)
    if np.any(~np.isfinite(y)) or np.any(y < bins.a) or np.any(y > bins.b):
        bad = y[(~np.isfinite(y)) | (y < bins.a) | (y > bins.b)].ravel()[0]
        raise OutOfSupport(f"target {bad!r} outside support [{bins.a}, {bins.b}]")
    yy = y[..., None]
    with np.errstate(over="ignore"):
        z_edges = (bins.edges - yy) / scale
    z = _interval_mass(cdf, z_edges[..., -1], z_edges[..., 0])
    if np.any(z < Z_FLOOR):
        raise DegenerateDistribution("truncation constant underflowed; sigma too small for this target")
    mass = _interval_mass(cdf, z_edges[..., 1:], z_edges[..., :-1])
    p = np.maximum(mass, 0.0) / z[..., None]
    return p / p.sum(axis=-1, keepdims=True)


def encode_gaussian(y_c, bins: BinScheme, spec: TargetDistSpec) -> np.ndarray:
    return _encode(y_c, bins, gaussian_cdf, spec.sigma)


def encode_student_t(y_c, bins: BinScheme, spec: TargetDistSpec) -> np.ndarray:
    nu = spec.nu
    return _encode(y_c, bins, lambda z: student_t_cdf(z, nu), spec.sigma)


def encode_laplace(y_c, bins: BinScheme, spec: TargetDistSpec) -> np.ndarray:
    return _encode(y_c, bins, laplace_cdf, spec.laplace_scale)


_ENCODERS = {
    "truncated_gaussian": encode_gaussian,
    "student_t": encode_student_t,
    "laplace": encode_laplace,
}


def encode(y_c, bins: BinScheme, spec: TargetDistSpec) -> np.ndarray:
    return _ENCODERS[spec.family](y_c, bins, spec)


def truncated_pdf(y, y_c: float, bins: BinScheme, spec: TargetDistSpec):
    """Density of the truncated target distribution (used by quadrature checks)."""
    y = np.asarray(y, dtype=float)
    if spec.family == "truncated_gaussian":
        s = spec.sigma
        base = np.exp(-0.5 * ((y - y_c) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        cdf = gaussian_cdf
    elif spec.family == "student_t":
        s, nu = spec.sigma, spec.nu
        t = (y - y_c) / s
        logc = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
        base = np.exp(logc - (nu + 1) / 2 * np.log1p(t * t / nu)) / s
        cdf = lambda z: student_t_cdf(z, nu)  # noqa: E731
    else:
        s = spec.laplace_scale
        base = np.exp(-np.abs(y - y_c) / s) / (2 * s)
        cdf = laplace_cdf
    z = _interval_mass(cdf, (bins.b - y_c) / s, (bins.a - y_c) / s)
    return np.where((y >= bins.a) & (y <= bins.b), base / z, 0.0)
