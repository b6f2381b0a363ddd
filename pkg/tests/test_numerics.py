"""Dense kernel: special functions, softmax, Kronecker products, eigen/solve, RNG."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ocets.errors import InvalidDimension, InvalidParameter, SingularMatrix
from ocets.numerics import (
    cond2,
    erf,
    erfc,
    gauss_sample,
    kron,
    make_rng,
    softmax,
    solve,
    spectral_norm,
    sym_eigen,
)


def taylor_erf(x: float, terms: int = 30) -> float:
    """Maclaurin series of erf; accurate to double precision for |x| <= 1.5."""
    s = sum((-1) ** n * x ** (2 * n + 1) / (math.factorial(n) * (2 * n + 1)) for n in range(terms))
    return 2.0 / math.sqrt(math.pi) * s


def power_norm(a: np.ndarray, iters: int = 2000) -> float:
    """Largest singular value by power iteration on a^T a."""
    v = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
    for _ in range(iters):
        w = a.T @ (a @ v)
        v = w / np.linalg.norm(w)
    return float(np.linalg.norm(a @ v))


class TestErf:
    def test_zero(self):
        assert erf(0.0) == 0.0

    def test_saturates(self):
        assert abs(erf(6.0) - 1.0) <= 1e-12
        assert abs(erf(-6.0) + 1.0) <= 1e-12
        assert erf(40.0) == 1.0

    def test_taylor_oracle(self):
        # frozen from the 30-term series
        assert taylor_erf(0.5) == pytest.approx(0.5204998778130465, abs=1e-15)
        assert abs(erf(0.5) - 0.5204998778130465) <= 1e-12
        for x in np.linspace(-1.5, 1.5, 61):
            assert abs(erf(x) - taylor_erf(float(x), 60)) <= 1e-12

    def test_odd_and_complement(self):
        x = np.linspace(-6, 6, 241)
        np.testing.assert_allclose(erf(-x), -erf(x), atol=0)
        np.testing.assert_allclose(erf(x) + erfc(x), 1.0, atol=1e-15)

    def test_matches_math_module(self):
        for x in np.linspace(-6, 6, 97):
            assert abs(erf(x) - math.erf(x)) <= 1e-15


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_no_overflow(self):
        q = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(q))
        assert q[0] == pytest.approx(1.0)
        assert q[1] < 1e-300

    def test_empty_raises(self):
        with pytest.raises(InvalidDimension):
            softmax([])

    @given(
        arrays(np.float64, st.integers(1, 30), elements=st.floats(-500, 500)),
        st.floats(-1e3, 1e3),
    )
    def test_sum_and_shift(self, z, c):
        q = softmax(z)
        assert np.all(q >= 0)
        assert abs(q.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(softmax(z + c), q, atol=1e-12)
        assert q[np.argmax(z)] == q.max()

    def test_batched_rows(self):
        z = np.random.default_rng(0).normal(size=(4, 5, 7))
        q = softmax(z)
        np.testing.assert_allclose(q.sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(q[2, 3], softmax(z[2, 3]))


class TestKron:
    def test_identity_blocks(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = kron(np.eye(2), b)
        np.testing.assert_array_equal(out[:2, :2], b)
        np.testing.assert_array_equal(out[2:, 2:], b)
        np.testing.assert_array_equal(out[:2, 2:], 0)

    def test_definition(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 2))
        out = kron(a, b)
        assert out.shape == (8, 6)
        for i in range(2):
            for j in range(3):
                np.testing.assert_array_equal(out[4 * i : 4 * i + 4, 2 * j : 2 * j + 2], a[i, j] * b)

    def test_vector_product(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            a, b = rng.normal(size=(3, 3)), rng.normal(size=(2, 2))
            u, v = rng.normal(size=3), rng.normal(size=2)
            np.testing.assert_allclose(kron(a, b) @ np.kron(u, v), np.kron(a @ u, b @ v), atol=1e-10)

    def test_mixed_product(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, c = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
            b, d = rng.normal(size=(3, 4)), rng.normal(size=(4, 3))
            np.testing.assert_allclose(kron(a, b) @ kron(c, d), kron(a @ c, b @ d), atol=1e-8)

    def test_inverse(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            a = rng.normal(size=(2, 2)) + 2 * np.eye(2)
            b = rng.normal(size=(2, 2)) + 2 * np.eye(2)
            np.testing.assert_allclose(
                np.linalg.inv(kron(a, b)), kron(np.linalg.inv(a), np.linalg.inv(b)), atol=1e-8
            )

    def test_spectral_norm_multiplies(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a = rng.normal(size=(3, 3))
            b = rng.normal(size=(2, 2))
            a, b = a + a.T, b + b.T
            assert power_norm(kron(a, b)) == pytest.approx(power_norm(a) * power_norm(b), rel=1e-8)
            assert spectral_norm(kron(a, b)) == pytest.approx(power_norm(kron(a, b)), rel=1e-8)

    def test_rejects_vectors(self):
        with pytest.raises(InvalidDimension):
            kron(np.ones(3), np.eye(2))


class TestSymEigen:
    def test_diagonal(self):
        vals, _ = sym_eigen(np.diag([1.0, 3.0]))
        np.testing.assert_allclose(vals, [3.0, 1.0])

    def test_second_difference_matrix(self):
        # tridiag(-1, 2, -1) has eigenvalues 2 - 2 cos(j pi / (n + 1))
        n = 12
        m = 2 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1)
        j = np.arange(1, n + 1)
        expected = np.sort(2 - 2 * np.cos(j * np.pi / (n + 1)))[::-1]
        vals, _ = sym_eigen(m)
        np.testing.assert_allclose(vals, expected, atol=1e-12)

    @settings(max_examples=50)
    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_reconstruction(self, n, seed):
        a = np.random.default_rng(seed).normal(size=(n, n))
        m = a + a.T
        vals, vecs = sym_eigen(m)
        assert np.all(np.diff(vals) <= 0)
        err = np.linalg.norm(m - vecs @ np.diag(vals) @ vecs.T)
        assert err <= 1e-8 * max(np.linalg.norm(m), 1e-300)

    def test_spd_positive_and_condition(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            a = rng.normal(size=(4, 4))
            m = a.T @ a + 0.1 * np.eye(4)
            vals, _ = sym_eigen(m)
            assert np.all(vals > 0)
            oracle = power_norm(m) * power_norm(np.linalg.inv(m))
            assert cond2(m) == pytest.approx(oracle, rel=1e-8)

    def test_asymmetric_raises(self):
        with pytest.raises(InvalidDimension):
            sym_eigen(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_square_raises(self):
        with pytest.raises(InvalidDimension):
            sym_eigen(np.ones((2, 3)))


class TestSolve:
    def test_round_trip(self):
        rng = np.random.default_rng(7)
        for n in (1, 2, 5, 20):
            a = rng.normal(size=(n, n)) + n * np.eye(n)
            b = rng.normal(size=n)
            x = solve(a, b)
            assert np.linalg.norm(a @ x - b) <= 1e-10 * (1 + np.linalg.norm(b))

    def test_singular(self):
        with pytest.raises(SingularMatrix) as info:
            solve(np.array([[1.0, 2.0], [2.0, 4.0]]), np.ones(2))
        assert info.value.smallest_pivot <= 1e-12

    def test_shape_checks(self):
        with pytest.raises(InvalidDimension):
            solve(np.eye(2), np.ones(3))
        with pytest.raises(InvalidDimension):
            solve(np.ones((2, 3)), np.ones(2))


class TestRng:
    def test_same_seed(self):
        a = gauss_sample(make_rng(11, "noise"), 0.0, 1.0, 100)
        b = gauss_sample(make_rng(11, "noise"), 0.0, 1.0, 100)
        np.testing.assert_array_equal(a, b)

    def test_streams_independent(self):
        a = make_rng(11, "init").normal(size=5)
        b = make_rng(11, "noise").normal(size=5)
        assert not np.array_equal(a, b)

    def test_std_zero(self):
        np.testing.assert_array_equal(gauss_sample(make_rng(0), 2.5, 0.0, 4), [2.5] * 4)

    def test_negative_std(self):
        with pytest.raises(InvalidParameter):
            gauss_sample(make_rng(0), 0.0, -1.0, 3)

    def test_moments(self):
        x = gauss_sample(make_rng(2024, "noise"), 0.0, 1.0, 10**6)
        assert abs(x.mean()) < 0.01
        assert 0.99 <= x.var() <= 1.01
