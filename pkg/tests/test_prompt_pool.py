import numpy as np
import pytest

from fwdprompt.prompt_pool import (
    PromptPool,
    SeparatedPromptPools,
    joint_similarity,
    key_softmax,
    key_update,
    select_top,
)
from fwdprompt.tensor_core import NumericalError


def pool_with(keys_img, keys_text, n_p=1, d=3):
    m = len(keys_img)
    return PromptPool(keys_img, keys_text, np.zeros((m, d)), n_p)


def test_single_entry_scores_two():
    pool = PromptPool.create(1, 1, 4, 5, 3, seed=0)
    rng = np.random.default_rng(0)
    assert joint_similarity(rng.standard_normal(4), rng.standard_normal(5), pool).tolist() == [2.0]


def test_two_entries_aligned_with_first_key():
    pool = pool_with([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]])
    phi = joint_similarity(np.array([3.0, 0.0]), np.array([0.5, 0.0]), pool)
    # oracle: 2e/(e+1) and 2/(e+1)
    np.testing.assert_allclose(phi, [2 * np.e / (np.e + 1), 2 / (np.e + 1)], atol=1e-15)
    np.testing.assert_allclose(phi, [1.46211716, 0.53788284], atol=5e-9)


def test_symmetric_pool_scores_equal():
    k = np.tile([0.3, -1.0, 2.0], (4, 1))
    pool = pool_with(k, k)
    phi = pool.similarity(np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.0, 1.0]))
    np.testing.assert_allclose(phi, 0.5, atol=1e-15)


def test_each_modality_softmax_sums_to_one():
    pool = PromptPool.create(20, 5, 6, 7, 3, seed=1)
    rng = np.random.default_rng(1)
    for _ in range(20):
        q_i, q_t = rng.standard_normal(6), rng.standard_normal(7)
        assert abs(key_softmax(q_i, pool.keys_img).sum() - 1) <= 1e-12
        assert abs(key_softmax(q_t, pool.keys_text).sum() - 1) <= 1e-12
        phi = pool.similarity(q_i, q_t)
        assert np.all((phi > 0) & (phi < 2)) and abs(phi.sum() - 2) <= 1e-12


def test_zero_query_rejected():
    pool = PromptPool.create(3, 1, 2, 2, 2, seed=0)
    with pytest.raises(NumericalError):
        pool.similarity(np.zeros(2), np.ones(2))


def test_select_top_examples():
    assert select_top([0.9, 0.5, 0.1], 2).tolist() == [0, 1]
    assert select_top([0.4, 0.4, 0.4], 2).tolist() == [0, 1]
    assert select_top([0.1, 0.7, 0.3], 3).tolist() == [1, 2, 0]
    with pytest.raises(ValueError):
        select_top([0.1], 2)


def test_selection_deterministic_and_scale_invariant():
    pool = PromptPool.create(20, 5, 6, 7, 3, seed=2)
    rng = np.random.default_rng(2)
    for _ in range(20):
        q_i, q_t = rng.standard_normal(6), rng.standard_normal(7)
        first = pool.select(q_i, q_t)
        assert np.array_equal(first, pool.select(q_i, q_t))
        assert np.array_equal(first, pool.select(rng.uniform(0.01, 100) * q_i, q_t))


def test_batch_selection_matches_single():
    pool = PromptPool.create(20, 5, 6, 7, 3, seed=3)
    rng = np.random.default_rng(3)
    q_i, q_t = rng.standard_normal((30, 6)), rng.standard_normal((30, 7))
    batch = pool.select_batch(q_i, q_t)
    for row, a, b in zip(batch, q_i, q_t):
        assert np.array_equal(row, pool.select(a, b))


def test_key_update_rules():
    pool = PromptPool.create(4, 2, 3, 3, 3, seed=4)
    before = pool.copy()
    key_update(pool, np.ones(3), np.ones(3), [0, 2], 0.0)
    np.testing.assert_array_equal(pool.keys_img, before.keys_img)

    q = np.array([0.0, 3.0, 4.0])
    pool.keys_img[1] = q / 5
    pool.keys_text[1] = q / 5
    key_update(pool, q, q, [1], 0.3)
    np.testing.assert_allclose(pool.keys_img[1], q / 5, atol=1e-15)

    pool.keys_img[3] = [1e-9, 0.0, 0.0]
    key_update(pool, np.array([2.0, 0, 0]), np.array([2.0, 0, 0]), [3], 1.0)
    np.testing.assert_array_equal(pool.keys_img[3], [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(pool.keys_img[0], before.keys_img[0])


def test_pool_size_fixed_and_counts():
    pool = PromptPool.create(20, 5, 4, 4, 3, seed=5)
    rng = np.random.default_rng(5)
    n = 37
    for _ in range(n):
        idx = pool.select(rng.standard_normal(4), rng.standard_normal(4))
        pool.record(1, idx)
        pool.update_values(idx, rng.standard_normal((5, 3)), 0.1)
    assert pool.size == 20
    assert pool.selection_counts[1].sum() == 5 * n
    assert list(pool.histograms()) == ["1"]


def test_update_values_accumulates_duplicates():
    pool = PromptPool(np.eye(2), np.eye(2), np.zeros((2, 2)), 2)
    pool.update_values([0, 0], np.array([[1.0, 0.0], [2.0, 0.0]]), 1.0)
    np.testing.assert_array_equal(pool.values[0], [-3.0, 0.0])


def test_n_p_bounds():
    with pytest.raises(ValueError):
        PromptPool.create(3, 4, 2, 2, 2, seed=0)
    with pytest.raises(ValueError):
        PromptPool.create(3, 0, 2, 2, 2, seed=0)


def test_separated_pools_split_budget():
    pool = SeparatedPromptPools.create(20, 5, 6, 7, 3, seed=6)
    assert pool.size == 20 and pool.half == 10
    rng = np.random.default_rng(6)
    q_i, q_t = rng.standard_normal(6), rng.standard_normal(7)
    idx = pool.select(q_i, q_t)
    assert len(idx) == 5
    assert np.all(idx[:3] < 10) and np.all(idx[3:] >= 10)
    # image half answers only to the image query
    assert np.array_equal(idx[:3], select_top(key_softmax(q_i, pool.keys_img[:10]), 3))
    assert np.array_equal(idx[3:] - 10, select_top(key_softmax(q_t, pool.keys_text[10:]), 2))
    batch = pool.select_batch(np.stack([q_i, q_i]), np.stack([q_t, q_t]))
    assert np.array_equal(batch[0], idx)


def test_separated_key_update_touches_own_modality():
    pool = SeparatedPromptPools.create(4, 2, 3, 3, 3, seed=7)
    before = pool.copy()
    pool.update_keys(np.ones(3), np.ones(3), [0, 3], 0.5)
    assert not np.allclose(pool.keys_img[0], before.keys_img[0])
    np.testing.assert_array_equal(pool.keys_text[0], before.keys_text[0])
    assert not np.allclose(pool.keys_text[3], before.keys_text[3])
    np.testing.assert_array_equal(pool.keys_img[3], before.keys_img[3])
