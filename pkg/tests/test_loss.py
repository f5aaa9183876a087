import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import parent_walk, random_tree
from saltseg.activation import conditional_log_probs, salt_log_probs, sibling_groups
from saltseg.loss import DICE_EPS, cross_entropy, encode_targets, hybrid_loss, soft_dice
from saltseg.tree import tree_matrices


def saturating_logits(tree, labels, scale=60.0):
    """Logits that put (almost) all mass on each voxel's label path."""
    logits = np.zeros((tree.node_count,) + labels.shape)
    for idx in np.ndindex(labels.shape):
        for node in parent_walk(tree, int(labels[idx]))[1:]:
            logits[(node,) + idx] = scale
    return logits


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestEncode:
    def test_root_label(self, t1):
        row = encode_targets(np.array([0]), tree_matrices(t1).R)[0]
        assert np.flatnonzero(row).tolist() == [0]

    def test_lung_left(self, t1):
        row = encode_targets(np.array([8]), tree_matrices(t1).R)[0]
        assert np.flatnonzero(row).tolist() == [0, 2, 3, 5, 8]

    def test_background(self, t1):
        row = encode_targets(np.array([1]), tree_matrices(t1).R)[0]
        assert np.flatnonzero(row).tolist() == [0, 1]

    def test_out_of_range(self, t1):
        with pytest.raises(ValueError, match="out of range"):
            encode_targets(np.array([3, 10]), tree_matrices(t1).R)

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(1, 150), seed=st.integers(0, 2**32 - 1))
    def test_rows_are_paths(self, n, seed):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng, n, 8)
        labels = rng.integers(0, n, (4, 3, 2))
        y = encode_targets(labels, tree_matrices(tree).R)
        assert y.shape == (labels.size, n)
        assert (y[:, 0] == 1).all()
        for v, lab in enumerate(labels.ravel()):
            assert np.flatnonzero(y[v]).tolist() == sorted(parent_walk(tree, int(lab)))


class TestCrossEntropy:
    def test_saturated_is_zero(self, t1):
        labels = np.array([[1, 4], [8, 9]])
        logits = saturating_logits(t1, labels)
        ce, _ = cross_entropy(salt_log_probs(logits, t1), encode_targets(labels, tree_matrices(t1).R))
        assert ce == pytest.approx(0.0, abs=1e-20)

    def test_uniform_lung_left(self, t1):
        labels = np.full((3, 2, 2), 8)
        ce, _ = cross_entropy(salt_log_probs(np.zeros((10, 3, 2, 2)), t1),
                              encode_targets(labels, tree_matrices(t1).R))
        oracle = math.log(2) + math.log(4) + math.log(12) + math.log(24)
        assert ce == pytest.approx(oracle, abs=1e-12)
        assert ce == pytest.approx(7.742402, abs=1e-6)

    def test_root_labels(self, t1):
        labels = np.zeros((2, 2, 2), dtype=int)
        logits = np.random.default_rng(0).normal(size=(10, 2, 2, 2))
        ce, _ = cross_entropy(salt_log_probs(logits, t1), encode_targets(labels, tree_matrices(t1).R))
        assert ce == 0.0

    def test_gradient(self, t1):
        labels = np.array([1, 8, 6])
        lp = salt_log_probs(np.random.default_rng(1).normal(size=(10, 3)), t1)
        y = encode_targets(labels, tree_matrices(t1).R)
        _, g = cross_entropy(lp, y)
        np.testing.assert_allclose(g, -y.T.astype(float) / 3)

    def test_decomposes_along_path(self, t1):
        rng = np.random.default_rng(2)
        labels = rng.choice([1, 4, 6, 7, 8, 9], size=(4, 4, 2))
        logits = rng.normal(size=(10, 4, 4, 2))
        ce, _ = cross_entropy(salt_log_probs(logits, t1), encode_targets(labels, tree_matrices(t1).R))
        q = conditional_log_probs(logits, sibling_groups(t1))
        total = 0.0
        for idx in np.ndindex(labels.shape):
            path = parent_walk(t1, int(labels[idx]))
            for depth, node in enumerate(path):
                total -= q[(node,) + idx] * (len(path) - depth)
        assert ce == pytest.approx(total / labels.size, abs=1e-9)


class TestSoftDice:
    def test_perfect(self, t1):
        labels = np.array([1, 1, 8, 9, 4])
        y = encode_targets(labels, tree_matrices(t1).R)
        loss, _, d = soft_dice(y.T.astype(float), y)
        assert loss == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(d[1:], 1.0)

    def test_vanishing_overlap(self):
        y = np.zeros((1000, 2), dtype=np.uint8)
        y[:, :] = 1
        p = np.zeros((2, 1000))
        loss, _, d = soft_dice(p, y)
        assert d[1] == pytest.approx(DICE_EPS / (1000 + DICE_EPS))
        assert d[1] < 1.1e-8
        assert loss == pytest.approx(1.0, abs=1e-7)

    def test_half_overlap(self):
        k = 200
        y = np.zeros((2 * k, 2), dtype=np.uint8)
        y[:, 0] = 1
        y[:k, 1] = 1
        p = np.zeros((2, 2 * k))
        p[0] = 1
        p[1, k // 2: k // 2 + k] = 1
        _, _, d = soft_dice(p, y)
        assert d[1] == pytest.approx((k + DICE_EPS) / (2 * k + DICE_EPS))
        assert d[1] == pytest.approx(0.5, abs=1e-7)

    def test_gradient(self):
        rng = np.random.default_rng(3)
        y = (rng.random((12, 4)) < 0.4).astype(np.uint8)
        y[:, 0] = 1
        p = rng.random((4, 12))
        _, g, _ = soft_dice(p, y)
        fd = fd_grad(lambda x: soft_dice(x, y)[0], p)
        assert rel_err(g, fd) < 1e-6
        assert (g[0] == 0).all()


class TestHybrid:
    def test_saturated(self, t1):
        labels = np.array([[[1], [4]], [[8], [6]]])
        report, _ = hybrid_loss(saturating_logits(t1, labels), t1, labels)
        assert report.total < 1e-6

    def test_total_is_sum(self, t1):
        rng = np.random.default_rng(4)
        labels = rng.choice([1, 4, 6, 7, 8, 9], size=(3, 3, 2))
        logits = rng.normal(size=(10, 3, 3, 2))
        report, _ = hybrid_loss(logits, t1, labels)
        y = encode_targets(labels, tree_matrices(t1).R)
        lp = salt_log_probs(logits, t1)
        ce, _ = cross_entropy(lp, y)
        dl, _, _ = soft_dice(np.exp(lp), y)
        assert report.ce == ce and report.dice == dl
        assert report.total == ce + dl

    @pytest.mark.parametrize("seed", range(8))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        tree = random_tree(rng, 5, 3)
        labels = rng.integers(0, 5, (2, 2, 1))
        logits = rng.normal(size=(5, 2, 2, 1))
        _, grad = hybrid_loss(logits, tree, labels)
        fd = fd_grad(lambda x: hybrid_loss(x, tree, labels)[0].total, logits)
        assert rel_err(grad, fd) < 1e-5

    def test_group_shift_invariance(self, t1):
        rng = np.random.default_rng(5)
        labels = rng.choice([1, 4, 6, 7, 8, 9], size=(4, 3, 2))
        logits = rng.normal(size=(10, 4, 3, 2))
        base, _ = hybrid_loss(logits, t1, labels)
        for g in sibling_groups(t1).groups:
            shifted = logits.copy()
            shifted[list(g)] += 3.7
            r, _ = hybrid_loss(shifted, t1, labels)
            assert r.total == pytest.approx(base.total, abs=1e-9)

    def test_deterministic(self, t1):
        rng = np.random.default_rng(6)
        labels = rng.choice([1, 8], size=(3, 3, 3))
        logits = rng.normal(size=(10, 3, 3, 3))
        a, ga = hybrid_loss(logits, t1, labels)
        b, gb = hybrid_loss(logits, t1, labels)
        assert a.total == b.total
        np.testing.assert_array_equal(ga, gb)

    def test_shape_mismatch(self, t1):
        with pytest.raises(ValueError):
            hybrid_loss(np.zeros((10, 2, 2, 2)), t1, np.zeros((2, 2, 3), dtype=int))
