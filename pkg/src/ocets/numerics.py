"""Dense numerical kernel.

Matrices are plain float64 numpy arrays; every public function checks the
dimensions it relies on instead of leaning on broadcasting.
"""

from __future__ import annotations

import warnings
import zlib

import numpy as np
from scipy import linalg as sla
from scipy import special

from .errors import InvalidDimension, InvalidParameter, SingularMatrix

SYMMETRY_TOL = 1e-10
PIVOT_TOL = 1e-12

# Fixed sub-stream ids: enabling noise must never shift the init stream.
STREAMS = {"init": 0, "shuffle": 1, "noise": 2, "influence": 3, "fixture": 4}


def erf(x):
    """Gauss error function, elementwise (scalar in, scalar out)."""
    out = special.erf(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def erfc(x):
    out = special.erfc(np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def softmax(logits, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    z = np.asarray(logits, dtype=float)
    if z.ndim == 0 or z.shape[axis] == 0:
        raise InvalidDimension("softmax needs a non-empty vector")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=float)
    if m.ndim != 2 or m.size == 0:
        raise InvalidDimension(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    return m


def kron(a, b) -> np.ndarray:
    return np.kron(_as_matrix(a, "a"), _as_matrix(b, "b"))


def check_symmetric(m, tol: float = SYMMETRY_TOL) -> np.ndarray:
    m = _as_matrix(m, "m")
    if m.shape[0] != m.shape[1]:
        raise InvalidDimension(f"matrix must be square, got {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > tol * scale:
        raise InvalidDimension("matrix is not symmetric")
    return m


def sym_eigen(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Columns of the returned matrix are the matching unit eigenvectors.
    """
    m = check_symmetric(m)
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def spectral_norm(m) -> float:
    """Largest singular value."""
    return float(np.linalg.norm(_as_matrix(m, "m"), 2))


def cond2(m) -> float:
    """kappa_2 = lambda_max / lambda_min of a symmetric positive-definite matrix."""
    vals, _ = sym_eigen(m)
    if vals[-1] <= 0:
        raise SingularMatrix("matrix is not positive definite", float(vals[-1]))
    return float(vals[0] / vals[-1])


def solve(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by partially pivoted LU.

    Raises SingularMatrix when the smallest pivot magnitude is <= 1e-12.
    """
    a = _as_matrix(a, "a")
    b = np.asarray(b, dtype=float)
    if a.shape[0] != a.shape[1]:
        raise InvalidDimension(f"solve needs a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise InvalidDimension(f"rhs length {b.shape[0]} does not match {a.shape[0]}")
    with warnings.catch_warnings():
        # singularity is reported below through the pivot check
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    pivot = float(np.abs(np.diag(lu)).min())
    if pivot <= PIVOT_TOL:
        raise SingularMatrix("matrix is numerically singular", pivot)
    return sla.lu_solve((lu, piv), b)


def make_rng(seed: int, stream: str | int = 0) -> np.random.Generator:
    """Generator for one named sub-stream of ``seed``.

    Streams are derived through SeedSequence spawn keys, so each purpose gets an
    independent, platform-stable PCG64 stream.
    """
    if isinstance(stream, str):
        key = STREAMS.get(stream, zlib.crc32(stream.encode()) + 1000)
    else:
        key = int(stream)
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


def gauss_sample(rng: np.random.Generator, mean: float, std: float, n) -> np.ndarray:
    if std < 0:
        raise InvalidParameter(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return rng.normal(mean, std, n)
