import math

import numpy as np
import pytest

import gaitrig.engine as E
from gaitrig.engine import Tensor
from gaitrig.losses import (
    ArcfaceConfig,
    BatchError,
    DegenerateEmbeddingError,
    FusionLossConfig,
    TripletConfig,
    arcface,
    batch_hard_triplet,
    fusion_loss,
    init_arcface_weights,
)


def exhaustive_batch_hard(emb: np.ndarray, labels: np.ndarray, margin: float) -> float:
    """O(N^3) oracle: enumerate all triplets, keep the batch-hard subset."""
    n = len(labels)
    per_anchor = []
    for a in range(n):
        d_pos, d_neg = [], []
        for p in range(n):
            if p != a and labels[p] == labels[a]:
                d_pos.append(np.linalg.norm(emb[a] - emb[p]))
        for q in range(n):
            if labels[q] != labels[a]:
                d_neg.append(np.linalg.norm(emb[a] - emb[q]))
        if d_pos and d_neg:
            per_anchor.append(max(0.0, margin + max(d_pos) - min(d_neg)))
    assert per_anchor, "oracle: empty batch"
    return float(np.mean(per_anchor))


def arcface_angle_oracle(emb, labels, weights, s, m):
    """Recompute through explicit angles and the hand softmax formula."""
    e = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    w = weights / np.linalg.norm(weights, axis=1, keepdims=True)
    cos = np.clip(e @ w.T, -1 + 1e-7, 1 - 1e-7)
    theta = np.arccos(cos)
    logits = s * cos.copy()
    for i, lab in enumerate(labels):
        logits[i, lab] = s * math.cos(theta[i, lab] + m)
    losses = []
    for i, lab in enumerate(labels):
        z = logits[i] - logits[i].max()
        p = np.exp(z) / np.exp(z).sum()
        losses.append(-math.log(p[lab]))
    return float(np.mean(losses))


class TestBatchHardTriplet:
    def test_separated_clusters_zero_loss(self):
        emb = Tensor(np.array([[0.0], [0.0], [10.0], [10.0]]))
        labels = np.array([0, 0, 1, 1])
        loss = batch_hard_triplet(emb, labels, TripletConfig(margin=0.2))
        assert loss.item() == 0.0

    def test_collapsed_embeddings_loss_is_margin(self):
        emb = Tensor(np.ones((4, 3)) * 2.0)
        labels = np.array([0, 0, 1, 1])
        loss = batch_hard_triplet(emb, labels, TripletConfig(margin=0.2))
        assert loss.item() == pytest.approx(0.2, abs=1e-12)

    def test_matches_exhaustive_enumeration(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            n = int(rng.integers(4, 17))
            labels = rng.integers(0, 4, size=n)
            if not _has_valid_anchor(labels):
                continue
            emb = rng.normal(size=(n, 6))
            got = batch_hard_triplet(Tensor(emb), labels, TripletConfig(margin=0.2)).item()
            want = exhaustive_batch_hard(emb, labels, 0.2)
            assert got == pytest.approx(want, abs=1e-12), trial

    def test_anchor_without_positive_excluded(self):
        # identity 2 has a single sample: it cannot anchor, others can
        emb = np.array([[0.0], [0.1], [5.0], [5.1], [9.0]])
        labels = np.array([0, 0, 1, 1, 2])
        got = batch_hard_triplet(Tensor(emb), labels, TripletConfig(margin=0.2)).item()
        assert got == pytest.approx(exhaustive_batch_hard(emb, labels, 0.2), abs=1e-12)

    def test_all_excluded_raises(self):
        emb = Tensor(np.zeros((3, 2)))
        with pytest.raises(BatchError):
            batch_hard_triplet(emb, np.array([0, 1, 2]))

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(1)
        emb = rng.normal(size=(8, 4))
        labels = rng.integers(0, 2, size=8)
        labels[:2] = [0, 1]
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        moved = emb @ q.T + rng.normal(size=4)
        a = batch_hard_triplet(Tensor(emb), labels).item()
        b = batch_hard_triplet(Tensor(moved), labels).item()
        assert a == pytest.approx(b, abs=1e-9)

    def test_grad_check(self):
        rng = np.random.default_rng(2)
        labels = np.array([0, 0, 1, 1, 2, 2])
        fn = lambda e: batch_hard_triplet(e, labels, TripletConfig(margin=0.5))
        assert E.grad_check(fn, [Tensor(rng.normal(size=(6, 4)))]) < 1e-4

    def test_margin_validated(self):
        with pytest.raises(ValueError):
            TripletConfig(margin=0.0)


def _has_valid_anchor(labels):
    labels = np.asarray(labels)
    counts = {l: (labels == l).sum() for l in set(labels.tolist())}
    return any(c >= 2 for c in counts.values()) and len(counts) >= 2


class TestArcface:
    def test_closed_form_aligned_embedding(self):
        # embedding on its class weight, orthogonal classes, m=0, s=1
        weights = Tensor(np.eye(2))
        emb = Tensor(np.array([[1.0, 0.0]]))
        loss = arcface(emb, np.array([0]), weights, ArcfaceConfig(scale=1.0, margin=0.0))
        # cos is clamped at 1 - 1e-7, which perturbs the exact value below 1e-6
        expect = -math.log(math.e / (math.e + 1.0))
        assert loss.item() == pytest.approx(expect, abs=1e-6)

    def test_rescaling_invariance(self):
        rng = np.random.default_rng(3)
        emb = rng.normal(size=(6, 8))
        labels = rng.integers(0, 3, size=6)
        weights = Tensor(rng.normal(size=(3, 8)))
        a = arcface(Tensor(emb), labels, weights).item()
        b = arcface(Tensor(7.0 * emb), labels, weights).item()
        assert abs(a - b) < 1e-6

    def test_matches_angle_space_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            emb = rng.normal(size=(8, 5))
            labels = rng.integers(0, 4, size=8)
            weights = rng.normal(size=(4, 5))
            got = arcface(Tensor(emb), labels, Tensor(weights),
                          ArcfaceConfig(scale=30.0, margin=0.5)).item()
            want = arcface_angle_oracle(emb, labels, weights, 30.0, 0.5)
            assert got == pytest.approx(want, rel=1e-9)

    def test_zero_norm_embedding_rejected(self):
        emb = Tensor(np.array([[0.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(DegenerateEmbeddingError):
            arcface(emb, np.array([0, 1]), Tensor(np.eye(2)))

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            arcface(Tensor(np.ones((2, 2))), np.array([0, 5]), Tensor(np.eye(2)))

    def test_grad_check_embeddings_and_weights(self):
        rng = np.random.default_rng(5)
        labels = np.array([0, 1, 2, 0])
        fn = lambda e, w: arcface(e, labels, w, ArcfaceConfig(scale=4.0, margin=0.3))
        err = E.grad_check(fn, [Tensor(rng.normal(size=(4, 5))),
                                Tensor(rng.normal(size=(3, 5)))])
        assert err < 1e-4

    def test_init_weights_normalized(self):
        w = init_arcface_weights(5, 8, np.random.default_rng(6), dtype=np.float64)
        np.testing.assert_allclose(np.linalg.norm(w.data, axis=1), np.ones(5), atol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ArcfaceConfig(scale=-1.0)
        with pytest.raises(ValueError):
            ArcfaceConfig(margin=2.0)


class TestFusionLoss:
    def setup_batch(self, seed=7):
        rng = np.random.default_rng(seed)
        emb = rng.normal(size=(8, 6))
        labels = np.array([0, 0, 1, 1, 2, 2, 3, 3])
        weights = rng.normal(size=(4, 6))
        return emb, labels, weights

    def test_arithmetic_combination(self):
        emb, labels, weights = self.setup_batch()
        tri = batch_hard_triplet(Tensor(emb), labels).item()
        arc = arcface(Tensor(emb), labels, Tensor(weights)).item()
        lam = 0.9
        total = fusion_loss(Tensor(emb), labels, Tensor(weights),
                            cfg=FusionLossConfig(lam=lam)).item()
        assert total == pytest.approx(lam * tri + (1 - lam) * arc, abs=1e-12)

    def test_lambda_one_is_triplet(self):
        emb, labels, weights = self.setup_batch(8)
        tri = batch_hard_triplet(Tensor(emb), labels).item()
        total = fusion_loss(Tensor(emb), labels, Tensor(weights),
                            cfg=FusionLossConfig(lam=1.0)).item()
        assert total == pytest.approx(tri, abs=1e-15)

    def test_lambda_zero_is_arcface(self):
        emb, labels, weights = self.setup_batch(9)
        arc = arcface(Tensor(emb), labels, Tensor(weights)).item()
        total = fusion_loss(Tensor(emb), labels, Tensor(weights),
                            cfg=FusionLossConfig(lam=0.0)).item()
        assert total == pytest.approx(arc, abs=1e-15)

    def test_combined_gradient_is_weighted_sum(self):
        emb, labels, weights = self.setup_batch(10)
        lam = 0.9

        t1 = Tensor(emb.copy(), requires_grad=True)
        batch_hard_triplet(t1, labels).backward()
        t2 = Tensor(emb.copy(), requires_grad=True)
        arcface(t2, labels, Tensor(weights)).backward()
        t3 = Tensor(emb.copy(), requires_grad=True)
        fusion_loss(t3, labels, Tensor(weights), cfg=FusionLossConfig(lam=lam)).backward()
        np.testing.assert_allclose(t3.grad, lam * t1.grad + (1 - lam) * t2.grad, atol=1e-6)

    def test_per_group_variant(self):
        emb, labels, weights = self.setup_batch(11)
        groups = [Tensor(emb[:, :3]), Tensor(emb[:, 3:])]
        got = fusion_loss(Tensor(emb), labels, Tensor(weights),
                          triplet_cfg=TripletConfig(per_group=True),
                          group_embs=groups, cfg=FusionLossConfig(lam=1.0)).item()
        want = 0.5 * (batch_hard_triplet(Tensor(emb[:, :3]), labels).item()
                      + batch_hard_triplet(Tensor(emb[:, 3:]), labels).item())
        assert got == pytest.approx(want, abs=1e-12)

    def test_lambda_validated(self):
        with pytest.raises(ValueError):
            FusionLossConfig(lam=1.5)

    def test_grad_check_fusion(self):
        rng = np.random.default_rng(12)
        labels = np.array([0, 0, 1, 1])
        weights = Tensor(rng.normal(size=(2, 4)))
        fn = lambda e: fusion_loss(e, labels, weights)
        assert E.grad_check(fn, [Tensor(rng.normal(size=(4, 4)))]) < 1e-4
