import numpy as np
import pytest

from fwdprompt.subspace import BasisKind, conflicting_indices, core_space
from fwdprompt.synthetic_tasks import (
    Geometry,
    SuiteConfig,
    TaskRecipe,
    frame_overlap,
    generate_suite,
    generate_task,
    read_suite,
    write_suite,
)
from fwdprompt.toy_mllm import ModelConfig, ToyMLLM

MC = ModelConfig()


def small_suite(**kw):
    kw = {"n_train": 64, "n_eval": 32, "n_pretrain": 64, **kw}
    return generate_suite(SuiteConfig(**kw), MC)


def mean_coefficients(ds, split="eval"):
    items = getattr(ds, split)
    return np.array([i.image.mean(axis=0) @ ds.recipe.frame for i in items])


def perceptron(x, y, n_classes, epochs=1000):
    """Multiclass perceptron; on separable data it stops with zero training errors."""
    w = np.zeros((n_classes, x.shape[1]))
    for _ in range(epochs):
        mistakes = 0
        for xi, yi in zip(x, y):
            guess = int(np.argmax(w @ xi))
            if guess != yi:
                w[yi] += xi
                w[guess] -= xi
                mistakes += 1
        if not mistakes:
            break
    return w


def test_noise_free_task_is_linearly_separable():
    tasks, _ = small_suite(noise=0.0, n_train=400, n_eval=200)
    for ds in tasks:
        # oracle: a perceptron fit on train and eval together reaches zero errors,
        # so some linear classifier scores 1.0 on every generated instance
        lookup = {c: k for k, c in enumerate(ds.classes)}
        x = np.vstack([mean_coefficients(ds, "train"), mean_coefficients(ds, "eval")])
        y = np.array([lookup[i.label] for i in ds.train + ds.eval])
        w = perceptron(x, y, len(ds.classes))
        assert np.mean(np.argmax(x @ w.T, axis=1) == y) == 1.0


def test_noise_free_labels_follow_rule():
    tasks, _ = small_suite(noise=0.0)
    ds = tasks[0]
    scores = mean_coefficients(ds) @ ds.recipe.label_rule.T
    assert np.array_equal(ds.classes[np.argmax(scores, axis=1)], [i.label for i in ds.eval])


def test_same_seed_same_data():
    a, pa = small_suite(seed=3)
    b, pb = small_suite(seed=3)
    assert [t.digest() for t in a] == [t.digest() for t in b] and pa.digest() == pb.digest()
    for x, y in zip(a[0].train, b[0].train):
        assert np.array_equal(x.image, y.image) and np.array_equal(x.text, y.text) and x.label == y.label
    c, _ = small_suite(seed=4)
    assert a[0].digest() != c[0].digest()


def test_labels_balanced_and_splits_disjoint():
    tasks, _ = small_suite(n_train=66, n_eval=33)
    for ds in tasks:
        for items in (ds.train, ds.eval):
            counts = np.bincount([i.label for i in items])[ds.classes]
            assert counts.max() - counts.min() <= 1
        train_keys = {i.image.tobytes() for i in ds.train}
        assert not any(i.image.tobytes() in train_keys for i in ds.eval)


def test_disjoint_frames_orthogonal():
    mc = ModelConfig(d_i=64)
    tasks, pre = generate_suite(SuiteConfig(geometry="Disjoint", n_train=16, n_eval=8, n_pretrain=16), mc)
    frames = [t.recipe.frame for t in tasks]
    for a in range(4):
        for b in range(a + 1, 4):
            assert np.abs(frames[a].T @ frames[b]).max() <= 0.02
        assert np.abs(frames[a].T @ pre.recipe.frame).max() <= 0.02
        assert tasks[a].recipe.rho == 0.0


def test_nested_frames_inside_pretrained():
    tasks, pre = small_suite()
    for t in tasks:
        np.testing.assert_allclose(frame_overlap(t.recipe.frame, pre.recipe.frame), 1.0, atol=1e-12)


def test_nested_tasks_conflict_with_pretrained_space():
    tasks, pre = small_suite()
    model = ToyMLLM(MC)
    emb = np.vstack([model.input_embeddings(i) for i in pre.train])
    v_pre, _, _ = core_space(emb, 0.99, kind=BasisKind.PRETRAINED)
    for t in tasks:
        v_core, _, _ = core_space(np.vstack([model.input_embeddings(i) for i in t.train]), 0.99)
        # brute-force oracle over every column pair
        brute = {i for i in range(v_pre.size)
                 if np.any(np.abs(v_pre.basis[:, i] @ v_core.basis) > 0.5)}
        found = conflicting_indices(v_pre, v_core, 0.5)
        assert found == brute and found


def test_mixed_rho_is_honest():
    rho = (0.0, 0.3, 0.7, 1.0)
    tasks, pre = small_suite(geometry=Geometry.MIXED, rho=rho)
    for t, r in zip(tasks, rho):
        assert abs(frame_overlap(t.recipe.frame, pre.recipe.frame).mean() - r) <= 0.02
    with pytest.raises(ValueError):
        small_suite(geometry=Geometry.MIXED, rho=(0.5,))


def test_single_task_suite():
    tasks, _ = small_suite(n_tasks=1)
    assert len(tasks) == 1 and tasks[0].task_id == 1


def test_task_vocabularies_disjoint():
    tasks, pre = small_suite()
    seen = set()
    for t in tasks:
        toks = set(t.recipe.tokens.tolist())
        assert not toks & seen
        seen |= toks
        assert toks <= set(pre.recipe.tokens.tolist())
    disjoint, pre_d = small_suite(geometry="Disjoint")
    assert not set(pre_d.recipe.tokens.tolist()) & {x for t in disjoint for x in t.recipe.tokens.tolist()}


def test_dimension_errors():
    with pytest.raises(ValueError, match="exceeds"):
        TaskRecipe(1, np.ones((2, 3)) / 2, np.arange(2), np.ones((2, 3)), np.arange(2), 4, 4, 1, 1, 0.0)
    with pytest.raises(ValueError, match="orthogonal image directions"):
        generate_suite(SuiteConfig(geometry="Disjoint"), ModelConfig(d_i=16))
    with pytest.raises(ValueError, match="labels"):
        generate_suite(SuiteConfig(n_tasks=6), MC)


def test_suite_file_round_trip(tmp_path):
    tasks, pre = small_suite(n_train=8, n_eval=4, n_pretrain=8)
    path = tmp_path / "suite.tsv"
    write_suite(path, tasks + [pre])
    back = read_suite(path)
    for ds in tasks:
        for split in ("train", "eval"):
            ours, theirs = getattr(ds, split), back[ds.task_id][split]
            assert len(ours) == len(theirs)
            for a, b in zip(ours, theirs):
                assert np.array_equal(a.image, b.image) and np.array_equal(a.text, b.text)
                assert a.label == b.label


def test_suite_file_errors(tmp_path):
    bad = tmp_path / "bad.tsv"
    bad.write_text("not a suite\n")
    with pytest.raises(ValueError, match="header"):
        read_suite(bad)
    bad.write_text("#fwdprompt-suite v1\n1\ttrain\t0\t1x2\t0.5\t3\n")
    with pytest.raises(ValueError, match=":2:"):
        read_suite(bad)
