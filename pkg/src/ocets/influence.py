"""Influence functions of squared-error regression and softmax classification.

Classification parameters are a d x K matrix ``beta`` whose flattened
(row-major, feature-major) form orders the gradient as ``x kron (sigma - e_y)``
and the Hessian as ``x x^T kron P``.  Class labels are 0-based.

The full softmax parameterisation is over-complete: ``P = diag(s) - s s^T``
always annihilates the all-ones vector, so its smallest eigenvalue is exactly
zero and any Hessian built from it is singular.  ``identifiable=True`` pins the
last class's column to zero and keeps only the first K-1 classes, which gives
a positive-definite ``P`` for every interior ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimension, PreconditionError, SingularMatrix
from .numerics import cond2, kron, softmax, solve, sym_eigen

SQRT2 = math.sqrt(2.0)
SPD_FLOOR = 1e-10
MAX_DIM = 2048
RIDGE = 1e-10
BOUND_RTOL = 1e-12


def softmax_covariance(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return np.diag(s) - np.outer(s, s)


@dataclass(frozen=True)
class RegressionInstance:
    x: np.ndarray
    y: float
    theta: np.ndarray
    sigma_x: np.ndarray

    def __post_init__(self):
        x, theta, sx = (np.asarray(a, dtype=float) for a in (self.x, self.theta, self.sigma_x))
        d = x.shape[0]
        if x.ndim != 1 or theta.shape != (d,) or sx.shape != (d, d):
            raise InvalidDimension("regression instance needs x, theta of length d and a d x d covariance")
        lam_min = sym_eigen(sx)[0][-1]
        if lam_min <= SPD_FLOOR:
            raise SingularMatrix("feature covariance is not positive definite", float(lam_min))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "sigma_x", sx)

    @classmethod
    def from_samples(cls, features, x, y: float, theta) -> "RegressionInstance":
        """Use the empirical second moment (1/n) sum x_i x_i^T of ``features``."""
        X = np.asarray(features, dtype=float)
        n, d = X.shape
        if n <= d:
            raise PreconditionError(f"need more samples than features (n={n}, d={d})", ["n_gt_d"])
        return cls(np.asarray(x, dtype=float), float(y), np.asarray(theta, dtype=float), X.T @ X / n)

    @property
    def residual(self) -> float:
        return float(self.y - self.x @ self.theta)


@dataclass(frozen=True)
class ClassificationInstance:
    x: np.ndarray
    label: int
    beta: np.ndarray  # (d, K)
    expected_hessian: np.ndarray | None = None
    identifiable: bool = False
    sigma: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if x.ndim != 1 or beta.ndim != 2 or beta.shape[0] != x.shape[0]:
            raise InvalidDimension("classification instance needs x of length d and beta of shape d x K")
        if not 0 <= self.label < beta.shape[1]:
            raise InvalidDimension(f"label {self.label} outside 0..{beta.shape[1] - 1}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", softmax(x @ beta))
        if self.expected_hessian is not None:
            eh = np.asarray(self.expected_hessian, dtype=float)
            n = self.d * self.n_free
            if eh.shape != (n, n):
                raise InvalidDimension(f"expected Hessian must be {n} x {n}, got {eh.shape}")
            object.__setattr__(self, "expected_hessian", eh)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        return self.beta.shape[1]

    @property
    def n_free(self) -> int:
        return self.k - 1 if self.identifiable else self.k

    @property
    def onehot(self) -> np.ndarray:
        e = np.zeros(self.k)
        e[self.label] = 1.0
        return e

    @property
    def prob_residual(self) -> np.ndarray:
        """sigma - e_y restricted to the free classes."""
        return (self.sigma - self.onehot)[: self.n_free]

    @property
    def p_matrix(self) -> np.ndarray:
        return softmax_covariance(self.sigma)[: self.n_free, : self.n_free]


def prob_residual_norm(s, label: int) -> float:
    s = np.asarray(s, dtype=float)
    e = np.zeros_like(s)
    e[label] = 1.0
    return float(np.linalg.norm(s - e))


def if_mse(inst: RegressionInstance) -> np.ndarray:
    """(E[x x^T])^-1 x (y - x^T theta)."""
    return solve(inst.sigma_x, inst.x * inst.residual)


def softmax_grad(inst: ClassificationInstance) -> np.ndarray:
    """Gradient of -log sigma_y with respect to the full d x K ``beta``."""
    return np.outer(inst.x, inst.sigma - inst.onehot)


def ce_gradient_vector(inst: ClassificationInstance) -> np.ndarray:
    return np.kron(inst.x, inst.prob_residual)


def ce_hessian_single(inst: ClassificationInstance) -> np.ndarray:
    return kron(np.outer(inst.x, inst.x), inst.p_matrix)


def empirical_ce_hessian(features, beta, identifiable: bool = False) -> np.ndarray:
    """Sample mean of x x^T kron P(x) over the rows of ``features``."""
    X = np.asarray(features, dtype=float)
    beta = np.asarray(beta, dtype=float)
    k = beta.shape[1]
    free = k - 1 if identifiable else k
    S = softmax(X @ beta)
    # P_i = diag(s_i) - s_i s_i^T, restricted to the free classes
    P = np.einsum("nk,kl->nkl", S, np.eye(k)) - np.einsum("nk,nl->nkl", S, S)
    P = P[:, :free, :free]
    H = np.einsum("ni,nj,nkl->ikjl", X, X, P) / X.shape[0]
    d = X.shape[1]
    return H.reshape(d * free, d * free)


def if_ce(inst: ClassificationInstance, regularize: bool = False) -> np.ndarray:
    """-(E[x x^T kron P])^-1 (x kron (sigma - e_y)).

    A singular expected Hessian (an overconfident model drives P to zero)
    raises SingularMatrix unless ``regularize`` adds a 1e-10 ridge.
    """
    if inst.expected_hessian is None:
        raise PreconditionError("instance carries no expected Hessian", ["expected_hessian"])
    H = inst.expected_hessian
    if H.shape[0] > MAX_DIM:
        raise InvalidDimension(f"Hessian dimension {H.shape[0]} exceeds the {MAX_DIM} cap")
    if regularize:
        H = H + RIDGE * np.eye(H.shape[0])
    return solve(H, -ce_gradient_vector(inst))


@dataclass(frozen=True)
class InfluenceReport:
    if_mse: np.ndarray
    if_ce: np.ndarray
    ratio: float
    lower_bound: float
    upper_bound: float
    kappa2: float
    lambda_min_p: float
    lambda_max_p: float
    residual: float
    prob_residual_norm: float

    @property
    def sandwich_holds(self) -> bool:
        return (
            self.lower_bound * (1 - BOUND_RTOL) <= self.ratio <= self.upper_bound * (1 + BOUND_RTOL)
        )

    def row(self) -> dict:
        return {
            "ratio": self.ratio,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "kappa2": self.kappa2,
            "lambda_min_p": self.lambda_min_p,
            "lambda_max_p": self.lambda_max_p,
            "residual": self.residual,
            "prob_residual_norm": self.prob_residual_norm,
            "sandwich_holds": self.sandwich_holds,
        }


def theorem1_bounds(reg: RegressionInstance, cls: ClassificationInstance, p_expected) -> InfluenceReport:
    """Influence ratio ||IF_CE|| / ||IF_MSE|| with its two-sided spectral bound.

    The classification Hessian is taken in separable form, sigma_x kron
    ``p_expected``; both instances must share the feature vector x.
    """
    P = np.asarray(p_expected, dtype=float)
    g = cls.prob_residual
    failed = []
    if not np.array_equal(reg.x, cls.x):
        failed.append("shared_x")
    if P.shape != (g.shape[0], g.shape[0]):
        raise InvalidDimension(f"p_expected must be {g.shape[0]} x {g.shape[0]}, got {P.shape}")
    p_vals, _ = sym_eigen(P)
    s_vals, _ = sym_eigen(reg.sigma_x)
    if not s_vals[-1] > 0:
        failed.append("lambda_min_sigma_x")
    if not p_vals[-1] > 0:
        failed.append("lambda_min_p")
    if reg.residual == 0.0:
        failed.append("residual_nonzero")
    g_norm = float(np.linalg.norm(g))
    if g_norm == 0.0:
        failed.append("prob_residual_nonzero")
    if failed:
        raise PreconditionError(f"influence bound preconditions violated: {', '.join(failed)}", failed)

    v_mse = if_mse(reg)
    sep = ClassificationInstance(cls.x, cls.label, cls.beta, kron(reg.sigma_x, P), cls.identifiable)
    v_ce = if_ce(sep)
    ratio = float(np.linalg.norm(v_ce) / np.linalg.norm(v_mse))
    kappa = cond2(reg.sigma_x)
    r = abs(reg.residual)
    lam_min, lam_max = float(p_vals[-1]), float(p_vals[0])
    return InfluenceReport(
        if_mse=v_mse,
        if_ce=v_ce,
        ratio=ratio,
        lower_bound=g_norm / (kappa * lam_max * r),
        upper_bound=SQRT2 * kappa / (lam_min * r),
        kappa2=kappa,
        lambda_min_p=lam_min,
        lambda_max_p=lam_max,
        residual=reg.residual,
        prob_residual_norm=g_norm,
    )


def stability_condition(kappa2: float, lambda_min_p: float, residual: float) -> bool:
    """Sufficient condition for CE to be no more influence-sensitive than MSE."""
    return kappa2 <= lambda_min_p * abs(residual) / SQRT2


def stability_region(kappas, lambda_mins, residuals) -> list[dict]:
    rows = []
    for kap in kappas:
        for lam in lambda_mins:
            for res in residuals:
                if kap <= 0 or lam <= 0 or res <= 0:
                    raise PreconditionError("stability grid values must be positive", ["positive_grid"])
                rows.append(
                    {
                        "kappa2": float(kap),
                        "lambda_min_p": float(lam),
                        "residual": float(res),
                        "upper_bound": SQRT2 * kap / (lam * res),
                        "condition_holds": stability_condition(kap, lam, res),
                    }
                )
    return rows


def random_instance(rng: np.random.Generator, d: int, k: int, identifiable: bool = True):
    """Random (regression, classification, P) triple for the bound sweep.

    sigma_x = A^T A + 0.1 I; the classification P is taken at the instance's
    own interior softmax output.
    """
    A = rng.normal(size=(d, d))
    sigma_x = A.T @ A + 0.1 * np.eye(d)
    x = rng.normal(size=d)
    theta = rng.normal(size=d)
    y = float(x @ theta + rng.normal())
    beta = rng.normal(size=(d, k))
    label = int(rng.integers(k))
    reg = RegressionInstance(x, y, theta, sigma_x)
    cls = ClassificationInstance(x, label, beta, identifiable=identifiable)
    return reg, cls, cls.p_matrix


@dataclass
class SweepResult:
    reports: list[InfluenceReport]
    skipped: int
    violations: list[dict]


def verify_sandwich(n_instances: int, seed_rng: np.random.Generator, max_d: int = 5, max_k: int = 5) -> SweepResult:
    reports, violations = [], []
    skipped = 0
    for i in range(n_instances):
        d = int(seed_rng.integers(1, max_d + 1))
        k = int(seed_rng.integers(2, max_k + 1))
        reg, cls, P = random_instance(seed_rng, d, k)
        try:
            rep = theorem1_bounds(reg, cls, P)
        except (PreconditionError, SingularMatrix):
            skipped += 1
            continue
        reports.append(rep)
        if not rep.sandwich_holds:
            violations.append({"index": i, "x": reg.x.tolist(), "y": reg.y, "theta": reg.theta.tolist(),
                               "sigma_x": reg.sigma_x.tolist(), "beta": cls.beta.tolist(),
                               "label": cls.label, **rep.row()})
    return SweepResult(reports, skipped, violations)


def max_prob_residual_norm(n_samples: int, rng: np.random.Generator, max_k: int = 10, chunk: int = 100_000) -> float:
    """Largest ||s - e_y|| over uniform simplex draws s with random K and label."""
    worst = 0.0
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        k = int(rng.integers(2, max_k + 1))
        s = rng.dirichlet(np.ones(k), size=m)
        y = rng.integers(k, size=m)
        s[np.arange(m), y] -= 1.0
        worst = max(worst, float(np.sqrt((s * s).sum(axis=1)).max()))
        done += m
    return worst
