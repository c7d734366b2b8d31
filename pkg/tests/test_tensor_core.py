import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwdprompt.tensor_core import (
    NumericalError,
    add,
    cosine_similarity,
    frobenius_norm,
    matmul,
    scale,
    softmax,
    svd,
    transpose,
)


def check_svd(a, res, tol=1e-10):
    m, n = a.shape
    assert res.u.shape == (m, min(m, n))
    assert res.v.shape == (n, n)
    assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
    err = np.linalg.norm(a - res.reconstruct())
    assert err <= tol * max(1.0, np.linalg.norm(a))
    assert np.abs(res.u.T @ res.u - np.eye(res.u.shape[1])).max() <= tol
    assert np.abs(res.v.T @ res.v - np.eye(n)).max() <= tol


def test_svd_identity():
    res = svd(np.eye(3))
    np.testing.assert_allclose(res.sigma, [1, 1, 1], atol=1e-14)


def test_svd_diagonal_keeps_axes():
    res = svd(np.diag([3.0, 2.0, 1.0]))
    np.testing.assert_allclose(res.sigma, [3, 2, 1], atol=1e-14)
    np.testing.assert_allclose(np.abs(res.v), np.eye(3), atol=1e-14)


def test_svd_random_8x5_seed42():
    a = np.random.default_rng(42).standard_normal((8, 5))
    res = svd(a)
    # oracle: multiply the returned factors back together
    rebuilt = res.u @ np.diag(res.sigma) @ res.v[:, :5].T
    assert np.linalg.norm(a - rebuilt) / np.linalg.norm(a) <= 1e-10
    check_svd(a, res)


def test_svd_sign_convention():
    a = np.random.default_rng(3).standard_normal((6, 4))
    v = svd(a).v
    for col in v.T:
        first = col[np.flatnonzero(np.abs(col) > 1e-12)[0]]
        assert first > 0


@pytest.mark.parametrize("shape", [(1, 1), (1, 5), (5, 1), (3, 7), (7, 3), (12, 12)])
def test_svd_shapes(shape):
    a = np.random.default_rng(sum(shape)).standard_normal(shape)
    check_svd(a, svd(a))


def test_svd_rank_deficient_completes_v():
    rng = np.random.default_rng(5)
    a = np.outer(rng.standard_normal(6), rng.standard_normal(4))
    res = svd(a)
    check_svd(a, res)
    assert res.sigma[1] <= 1e-12 * res.sigma[0]


def test_svd_zero_matrix():
    res = svd(np.zeros((4, 3)))
    np.testing.assert_array_equal(res.sigma, 0.0)
    check_svd(np.zeros((4, 3)), res)


def test_svd_rejects_non_finite_with_index():
    a = np.ones((3, 3))
    a[1, 2] = np.nan
    with pytest.raises(NumericalError, match=r"\(1, 2\)"):
        svd(a)


def test_svd_singular_values_match_numpy():
    a = np.random.default_rng(11).standard_normal((20, 13))
    np.testing.assert_allclose(svd(a).sigma, np.linalg.svd(a, compute_uv=False), rtol=1e-12)


def test_svd_transpose_same_spectrum():
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.standard_normal((rng.integers(1, 15), rng.integers(1, 15)))
        np.testing.assert_allclose(svd(a).sigma, svd(a.T).sigma, atol=1e-10)


def test_operator_norm_bound():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        a = rng.standard_normal((rng.integers(1, 7), rng.integers(1, 7)))
        x = rng.standard_normal(a.shape[1])
        s1 = svd(a).sigma[0]
        assert np.linalg.norm(a @ x) <= s1 * np.linalg.norm(x) * (1 + 1e-12) + 1e-12


def test_first_right_vector_is_maximally_stretched():
    rng = np.random.default_rng(10)
    a = rng.standard_normal((9, 6))
    v1 = svd(a).v[:, 0]
    for _ in range(200):
        x = rng.standard_normal(6)
        x /= np.linalg.norm(x)
        assert np.linalg.norm(a @ v1) >= np.linalg.norm(a @ x) - 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.integers(0, 2**32 - 1), st.floats(1e-6, 1e6))
def test_svd_property(m, n, seed, magnitude):
    a = magnitude * np.random.default_rng(seed).standard_normal((m, n))
    check_svd(a, svd(a))


def test_cosine_examples():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    v = np.array([0.3, -2.0, 5.0])
    assert cosine_similarity(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_cosine_clamped_and_zero_norm():
    v = np.array([1e-3, 7.0, 1e5])
    assert -1.0 <= cosine_similarity(v, 3 * v) <= 1.0
    with pytest.raises(NumericalError):
        cosine_similarity([0, 0], [1, 0])


def test_softmax_examples():
    np.testing.assert_allclose(softmax([2.5, 2.5, 2.5]), [1 / 3] * 3, atol=1e-15)
    # oracle: e/(e+1) evaluated in extended precision
    np.testing.assert_allclose(softmax([1.0, 0.0]), [0.73105858, 0.26894142], atol=5e-9)
    assert softmax([4.2]).tolist() == [1.0]


def test_softmax_stable_and_normalized():
    p = softmax([1000.0, 999.0, -1000.0], temperature=0.5)
    assert np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12
    with pytest.raises(ValueError):
        softmax([])
    with pytest.raises(ValueError):
        softmax([1.0], temperature=0.0)


def test_frobenius_examples():
    assert frobenius_norm(np.zeros((2, 3))) == 0.0
    assert frobenius_norm(np.eye(4)) == 2.0
    assert frobenius_norm(np.diag([3.0, 4.0])) == 5.0


def test_plumbing_ops():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    np.testing.assert_array_equal(matmul(np.eye(3), a), a)
    np.testing.assert_array_equal(transpose(transpose(a)), a)
    naive = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                naive[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(a, b), naive, atol=1e-14)
    np.testing.assert_array_equal(scale(a, 2.0), 2.0 * a)
    np.testing.assert_array_equal(add(a, b), a + b)
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(NumericalError):
        scale(np.full((2, 2), 1e308), 1e10)
