"""Influence functions for MSE and CE, the spectral sandwich bound and its stability region."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocets.errors import InvalidDimension, PreconditionError, SingularMatrix
from ocets.influence import (
    MAX_DIM,
    SQRT2,
    ClassificationInstance,
    RegressionInstance,
    ce_gradient_vector,
    ce_hessian_single,
    empirical_ce_hessian,
    if_ce,
    if_mse,
    max_prob_residual_norm,
    prob_residual_norm,
    random_instance,
    softmax_grad,
    stability_condition,
    stability_region,
    theorem1_bounds,
    verify_sandwich,
)
from ocets.numerics import make_rng


def neg_log_lik(x, label, beta) -> float:
    z = x @ beta
    z = z - z.max()
    return float(math.log(np.exp(z).sum()) - z[label])


def cosine(a, b) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestIfMse:
    def test_identity_covariance(self):
        inst = RegressionInstance([1.0, 0.0], 2.0, [0.0, 0.0], np.eye(2))
        np.testing.assert_allclose(if_mse(inst), [2.0, 0.0])

    def test_zero_residual(self):
        inst = RegressionInstance([1.0, 2.0], 5.0, [1.0, 2.0], np.eye(2))
        np.testing.assert_array_equal(if_mse(inst), 0.0)

    def test_scaled_covariance(self):
        inst = RegressionInstance([1.0, 1.0], 1.0, [0.0, 0.0], np.diag([2.0, 4.0]))
        np.testing.assert_allclose(if_mse(inst), [0.5, 0.25])

    def test_matches_reweighted_refit(self):
        # least-squares refit with extra weight eps on (x, y), differentiated at eps = 0
        rng = np.random.default_rng(0)
        n, d = 200, 3
        X = rng.normal(size=(n, d))
        Y = X @ rng.normal(size=d) + rng.normal(size=n)
        theta = np.linalg.lstsq(X, Y, rcond=None)[0]
        x, y = rng.normal(size=d), 1.7

        def refit(eps):
            A = X.T @ X / n + eps * np.outer(x, x)
            return np.linalg.solve(A, X.T @ Y / n + eps * x * y)

        eps = 1e-6
        numeric = (refit(eps) - refit(-eps)) / (2 * eps)
        analytic = if_mse(RegressionInstance.from_samples(X, x, y, theta))
        assert cosine(numeric, analytic) >= 0.999
        np.testing.assert_allclose(analytic, numeric, rtol=1e-3)

    def test_from_samples_needs_more_rows(self):
        with pytest.raises(PreconditionError):
            RegressionInstance.from_samples(np.ones((2, 2)), [1.0, 0.0], 1.0, [0.0, 0.0])

    def test_singular_covariance(self):
        with pytest.raises(SingularMatrix):
            RegressionInstance([1.0, 0.0], 1.0, [0.0, 0.0], np.diag([1.0, 0.0]))


class TestCeDerivatives:
    def test_gradient_vanishes_at_one_hot(self):
        beta = np.zeros((1, 3))
        beta[0, 1] = 800.0
        inst = ClassificationInstance([1.0], 1, beta)
        np.testing.assert_allclose(softmax_grad(inst), 0.0, atol=1e-300)

    def test_gradient_columns_sum_to_zero(self):
        rng = np.random.default_rng(1)
        inst = ClassificationInstance(rng.normal(size=4), 2, rng.normal(size=(4, 5)))
        np.testing.assert_allclose(softmax_grad(inst).sum(axis=1), 0.0, atol=1e-15)

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
            x, beta, label = rng.normal(size=d), rng.normal(size=(d, k)), int(rng.integers(k))
            g = softmax_grad(ClassificationInstance(x, label, beta))
            fd = np.zeros_like(beta)
            h = 1e-6
            for i in range(d):
                for j in range(k):
                    e = np.zeros_like(beta)
                    e[i, j] = h
                    fd[i, j] = (neg_log_lik(x, label, beta + e) - neg_log_lik(x, label, beta - e)) / (2 * h)
            np.testing.assert_allclose(g, fd, atol=1e-8)

    def test_gradient_vector_layout(self):
        rng = np.random.default_rng(3)
        inst = ClassificationInstance(rng.normal(size=3), 0, rng.normal(size=(3, 4)))
        np.testing.assert_array_equal(ce_gradient_vector(inst), softmax_grad(inst).ravel())

    def test_hessian_blockwise_assembly(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            d, k = int(rng.integers(1, 5)), int(rng.integers(2, 6))
            x, beta, label = rng.normal(size=d), rng.normal(size=(d, k)), int(rng.integers(k))
            inst = ClassificationInstance(x, label, beta)
            s = inst.sigma
            xx = np.outer(x, x)
            # class-major blocks: (k, l) block is x x^T (s_k [k == l] - s_k s_l)
            blocks = np.zeros((k * d, k * d))
            for a in range(k):
                for b in range(k):
                    coef = s[a] * (1.0 - s[a]) if a == b else -s[a] * s[b]
                    blocks[a * d : (a + 1) * d, b * d : (b + 1) * d] = coef * xx
            # move to the feature-major layout of the flattened beta
            perm = np.array([c * d + f for f in range(d) for c in range(k)])
            expected = blocks[np.ix_(perm, perm)]
            assert np.abs(ce_hessian_single(inst) - expected).max() <= 1e-12

    def test_hessian_second_difference(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(100):
            d, k = int(rng.integers(1, 4)), int(rng.integers(2, 5))
            x, beta, label = rng.normal(size=d), rng.normal(size=(d, k)), int(rng.integers(k))
            H = ce_hessian_single(ClassificationInstance(x, label, beta))
            n = d * k
            h = 1e-4
            f = lambda v: neg_log_lik(x, label, v.reshape(d, k))  # noqa: E731
            b0 = beta.ravel()
            fd = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    ei, ej = np.zeros(n), np.zeros(n)
                    ei[i], ej[j] = h, h
                    fd[i, j] = (f(b0 + ei + ej) - f(b0 + ei - ej) - f(b0 - ei + ej) + f(b0 - ei - ej)) / (4 * h * h)
            worst = max(worst, np.abs(H - fd).max())
        assert worst <= 1e-5

    def test_full_parameterisation_is_singular(self):
        inst = ClassificationInstance([1.0, -0.5], 0, np.random.default_rng(6).normal(size=(2, 3)))
        np.testing.assert_allclose(inst.p_matrix @ np.ones(3), 0.0, atol=1e-15)

    def test_identifiable_p_is_positive_definite(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            k = int(rng.integers(2, 7))
            inst = ClassificationInstance(rng.normal(size=2), 0, rng.normal(size=(2, k)), identifiable=True)
            assert np.linalg.eigvalsh(inst.p_matrix).min() > 0

    def test_empirical_hessian_is_mean_of_singles(self):
        rng = np.random.default_rng(8)
        X, beta = rng.normal(size=(7, 3)), rng.normal(size=(3, 4))
        for ident in (False, True):
            singles = [ce_hessian_single(ClassificationInstance(x, 0, beta, identifiable=ident)) for x in X]
            np.testing.assert_allclose(empirical_ce_hessian(X, beta, ident), np.mean(singles, axis=0), atol=1e-14)


class TestIfCe:
    def test_correct_confident_prediction_has_no_influence(self):
        beta = np.array([[0.0, 900.0]])
        inst = ClassificationInstance([1.0], 1, beta, expected_hessian=np.eye(2))
        np.testing.assert_allclose(if_ce(inst), 0.0, atol=1e-300)

    def test_one_feature_two_classes(self):
        # free parameter is beta[0, 0]; s = sigmoid(x * (b0 - b1))
        x, beta, label, h = 2.0, np.array([[0.3, -0.2]]), 0, 0.8
        s0 = 1.0 / (1.0 + math.exp(-x * 0.5))
        inst = ClassificationInstance([x], label, beta, expected_hessian=[[h]], identifiable=True)
        np.testing.assert_allclose(if_ce(inst), [-x * (s0 - 1.0) / h], rtol=1e-14)

    def test_missing_hessian(self):
        with pytest.raises(PreconditionError):
            if_ce(ClassificationInstance([1.0], 0, np.zeros((1, 2))))

    def test_dimension_cap(self):
        d = MAX_DIM + 1
        inst = ClassificationInstance(
            np.ones(d), 0, np.zeros((d, 2)), expected_hessian=np.eye(d), identifiable=True
        )
        with pytest.raises(InvalidDimension):
            if_ce(inst)

    def test_overconfident_model_is_singular(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(20, 1)) + 5.0
        beta = np.array([[500.0, 0.0, -500.0]])
        H = empirical_ce_hessian(X, beta, identifiable=True)
        inst = ClassificationInstance(X[0], 0, beta, expected_hessian=H, identifiable=True)
        with pytest.raises(SingularMatrix):
            if_ce(inst)
        assert np.all(np.isfinite(if_ce(inst, regularize=True)))

    def test_matches_reweighted_refit(self):
        # independent oracle: refit the K-1 parameter model with weight eps on one point
        rng = np.random.default_rng(10)
        n, d, k = 50, 2, 3
        X = rng.normal(size=(n, d))
        true_beta = np.column_stack([rng.normal(size=(d, k - 1)), np.zeros(d)])
        probs = np.exp(X @ true_beta)
        probs /= probs.sum(axis=1, keepdims=True)
        labels = np.array([rng.choice(k, p=p) for p in probs])
        x_new, y_new = rng.normal(size=d), 2

        def full(v):
            return np.column_stack([v.reshape(d, k - 1), np.zeros(d)])

        def grad(v, eps):
            B = full(v)
            S = np.exp(X @ B)
            S /= S.sum(axis=1, keepdims=True)
            S[np.arange(n), labels] -= 1.0
            g = X.T @ S / n
            s = np.exp(x_new @ B)
            s /= s.sum()
            s[y_new] -= 1.0
            g += eps * np.outer(x_new, s)
            return g[:, : k - 1].ravel()

        def refit(eps, v0):
            v = v0.copy()
            for _ in range(200_000):
                g = grad(v, eps)
                if np.abs(g).max() < 1e-13:
                    break
                v -= 2.0 * g
            return v

        v_hat = refit(0.0, np.zeros(d * (k - 1)))
        eps = 1e-5
        numeric = (refit(eps, v_hat) - refit(-eps, v_hat)) / (2 * eps)

        beta_hat = full(v_hat)
        H = empirical_ce_hessian(X, beta_hat, identifiable=True)
        inst = ClassificationInstance(x_new, y_new, beta_hat, expected_hessian=H, identifiable=True)
        analytic = if_ce(inst)
        assert cosine(numeric, analytic) >= 0.999
        np.testing.assert_allclose(analytic, numeric, rtol=1e-2)


class TestSandwich:
    def test_thousand_instances(self):
        res = verify_sandwich(1000, make_rng(0, "influence"))
        assert res.violations == []
        assert len(res.reports) + res.skipped == 1000
        assert len(res.reports) >= 990
        assert all(r.lower_bound <= r.upper_bound for r in res.reports)

    def test_ratio_matches_dense_inverse(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            d, k = int(rng.integers(1, 5)), int(rng.integers(2, 5))
            reg, cls, P = random_instance(rng, d, k)
            rep = theorem1_bounds(reg, cls, P)
            v_mse = np.linalg.inv(reg.sigma_x) @ reg.x * reg.residual
            v_ce = -np.linalg.inv(np.kron(reg.sigma_x, P)) @ np.kron(reg.x, cls.prob_residual)
            assert rep.ratio == pytest.approx(np.linalg.norm(v_ce) / np.linalg.norm(v_mse), rel=1e-9)

    def test_lower_bound_tight_in_scalar_case(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            reg, cls, P = random_instance(rng, 1, 2)
            rep = theorem1_bounds(reg, cls, P)
            assert rep.ratio == pytest.approx(rep.lower_bound, rel=1e-12)
            assert rep.sandwich_holds

    def test_kappa_and_spectrum_reported(self):
        reg = RegressionInstance([1.0, 1.0], 2.0, [0.0, 0.0], np.diag([1.0, 4.0]))
        cls = ClassificationInstance([1.0, 1.0], 0, np.zeros((2, 3)), identifiable=True)
        rep = theorem1_bounds(reg, cls, cls.p_matrix)
        assert rep.kappa2 == pytest.approx(4.0)
        # P at the uniform softmax over three classes, first two kept
        np.testing.assert_allclose([rep.lambda_min_p, rep.lambda_max_p], [1 / 9, 1 / 3])
        assert rep.residual == 2.0

    def test_zero_residual_rejected(self):
        reg = RegressionInstance([1.0], 1.0, [1.0], [[1.0]])
        cls = ClassificationInstance([1.0], 0, np.zeros((1, 2)), identifiable=True)
        with pytest.raises(PreconditionError) as err:
            theorem1_bounds(reg, cls, cls.p_matrix)
        assert "residual_nonzero" in err.value.failed

    def test_mismatched_features_rejected(self):
        reg = RegressionInstance([1.0], 0.0, [1.0], [[1.0]])
        cls = ClassificationInstance([2.0], 0, np.zeros((1, 2)), identifiable=True)
        with pytest.raises(PreconditionError) as err:
            theorem1_bounds(reg, cls, cls.p_matrix)
        assert err.value.failed == ["shared_x"]

    def test_nonpositive_p_rejected(self):
        reg = RegressionInstance([1.0], 0.0, [1.0], [[1.0]])
        cls = ClassificationInstance([1.0], 0, np.zeros((1, 2)), identifiable=True)
        with pytest.raises(PreconditionError) as err:
            theorem1_bounds(reg, cls, [[-0.1]])
        assert "lambda_min_p" in err.value.failed

    def test_p_shape_checked(self):
        reg = RegressionInstance([1.0], 0.0, [1.0], [[1.0]])
        cls = ClassificationInstance([1.0], 0, np.zeros((1, 3)), identifiable=True)
        with pytest.raises(InvalidDimension):
            theorem1_bounds(reg, cls, np.eye(3))

    def test_upper_bound_diverges_as_residual_vanishes(self):
        cls = ClassificationInstance([1.0], 0, np.zeros((1, 2)), identifiable=True)
        bounds = []
        for r in (1.0, 1e-2, 1e-4, 1e-6):
            rep = theorem1_bounds(RegressionInstance([1.0], r, [0.0], [[1.0]]), cls, cls.p_matrix)
            assert rep.sandwich_holds
            bounds.append(rep.upper_bound)
        np.testing.assert_allclose(np.array(bounds[1:]) / np.array(bounds[:-1]), 100.0)


class TestResidualNormBound:
    def test_vertex_attains_bound(self):
        assert prob_residual_norm([0.0, 1.0, 0.0], 0) == pytest.approx(SQRT2, abs=1e-15)

    def test_correct_vertex_is_zero(self):
        assert prob_residual_norm([0.0, 1.0], 1) == 0.0

    @settings(max_examples=300)
    @given(st.integers(2, 30), st.integers(0, 2**32 - 1))
    def test_bounded(self, k, seed):
        rng = np.random.default_rng(seed)
        s = rng.dirichlet(np.full(k, 0.1))
        assert prob_residual_norm(s, int(rng.integers(k))) <= SQRT2 + 1e-12

    def test_million_samples(self):
        worst = max_prob_residual_norm(1_000_000, make_rng(0, "influence"))
        assert worst <= SQRT2
        assert worst > 1.0


class TestStability:
    def test_boundary_holds(self):
        assert stability_condition(1.0, 1.0, SQRT2)

    def test_fails_when_ill_conditioned(self):
        assert not stability_condition(2.0, 1.0, 1.0)

    def test_negative_residual_uses_magnitude(self):
        assert stability_condition(1.0, 1.0, -2.0)

    def test_grid(self):
        rows = stability_region([1.0, 10.0], [0.5], [1.0, 100.0])
        assert len(rows) == 4
        assert [r["condition_holds"] for r in rows] == [False, True, False, True]
        assert rows[0]["upper_bound"] == pytest.approx(2 * SQRT2)

    def test_nonpositive_grid_value(self):
        with pytest.raises(PreconditionError):
            stability_region([1.0], [0.0], [1.0])
