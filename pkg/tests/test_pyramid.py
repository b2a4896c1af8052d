import numpy as np
import pytest

import gaitrig.engine as E
from gaitrig.engine import Tensor
from gaitrig.pyramid import GROUPS, PyramidHead, PyramidSpec, pool, split

# hand-listed group indices in 16-joint indexing
HAND_GROUPS = {
    "whole": list(range(16)),
    "upper": [1, 2, 3, 4, 5, 6, 7, 8, 15],       # navel/neck/head + arms
    "lower": [0, 9, 10, 11, 12, 13, 14],          # pelvis + legs
    "left_arm_right_leg": [3, 4, 5, 12, 13, 14],
    "right_arm_left_leg": [6, 7, 8, 9, 10, 11],
}


def feature_map(rng, n=2, t=5, v=16, c=8, dtype=np.float64):
    return Tensor(rng.normal(size=(n, t, v, c)).astype(dtype))


class TestPyramidSpec:
    def test_default_spec_valid(self):
        PyramidSpec()  # must not raise

    def test_groups_match_hand_enumeration(self):
        for name, idx in GROUPS:
            assert list(idx) == HAND_GROUPS[name]

    def test_scales_one_two_partition(self):
        whole = set(GROUPS[0][1])
        upper, lower = set(GROUPS[1][1]), set(GROUPS[2][1])
        assert whole == set(range(16))
        assert upper | lower == set(range(16))
        assert not (upper & lower)

    def test_scale_three_disjoint_limbs(self):
        a, b = set(GROUPS[3][1]), set(GROUPS[4][1])
        assert not (a & b)
        assert a | b == {3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}

    def test_invalid_partition_rejected(self):
        bad = (
            ("whole", tuple(range(16))),
            ("upper", (1, 2, 3)),
            ("lower", (0, 9, 10, 11, 12, 13, 14)),
            ("a", (3, 4, 5, 12, 13, 14)),
            ("b", (6, 7, 8, 9, 10, 11)),
        )
        with pytest.raises(ValueError):
            PyramidSpec(groups=bad)


class TestSplit:
    def test_scale1_slice_equals_input(self):
        rng = np.random.default_rng(0)
        f = feature_map(rng)
        parts = split(f)
        assert np.array_equal(parts[0].data, f.data)

    def test_scale2_covers_all_joints_once(self):
        rng = np.random.default_rng(1)
        f = feature_map(rng)
        parts = split(f)
        seen = np.concatenate([GROUPS[1][1], GROUPS[2][1]])
        gathered = np.concatenate([parts[1].data, parts[2].data], axis=2)
        assert sorted(seen) == list(range(16))
        np.testing.assert_array_equal(gathered, f.data[:, :, seen, :])

    def test_group_shapes(self):
        rng = np.random.default_rng(2)
        parts = split(feature_map(rng))
        assert [p.shape[2] for p in parts] == [16, 9, 7, 6, 6]

    def test_wrong_joint_count_rejected(self):
        with pytest.raises(ValueError):
            split(Tensor(np.zeros((1, 2, 12, 3))))


class TestPool:
    def test_uniform_kernel_is_mean(self):
        rng = np.random.default_rng(3)
        local = Tensor(rng.normal(size=(2, 5, 7, 4)))
        k = Tensor(np.full((7, 5), 1.0 / 35.0))
        out = pool(local, k)
        np.testing.assert_allclose(out.data, local.data.mean(axis=(1, 2)), atol=1e-6)

    def test_constant_input_kernel_sum(self):
        c_val, local = 3.0, Tensor(np.full((1, 4, 3, 2), 3.0))
        kern = np.random.default_rng(4).normal(size=(3, 4))
        out = pool(local, Tensor(kern))
        np.testing.assert_allclose(out.data, np.full((1, 2), c_val * kern.sum()), atol=1e-9)

    def test_matches_double_sum_oracle(self):
        rng = np.random.default_rng(5)
        local = rng.normal(size=(2, 5, 7, 4))
        kern = rng.normal(size=(7, 5))
        out = pool(Tensor(local), Tensor(kern)).data
        ref = np.zeros((2, 4))
        for n in range(2):
            for c in range(4):
                for t in range(5):
                    for j in range(7):
                        ref[n, c] += local[n, t, j, c] * kern[j, t]
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_linearity(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(2, 5, 7, 4))
        y = rng.normal(size=(2, 5, 7, 4))
        kern = Tensor(rng.normal(size=(7, 5)))
        lhs = pool(Tensor(2.0 * x + 3.0 * y), kern).data
        rhs = 2.0 * pool(Tensor(x), kern).data + 3.0 * pool(Tensor(y), kern).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            pool(Tensor(np.zeros((1, 5, 7, 4))), Tensor(np.zeros((7, 4))))


class TestHead:
    def make_head(self, rng, t=5, c=8, d=4):
        return PyramidHead(channels=c, t_frames=t, embed_dim=d,
                           rng=rng, dtype=np.float64)

    def test_zero_pooled_zero_bias_zero_embedding(self):
        rng = np.random.default_rng(7)
        head = self.make_head(rng)
        pooled = [Tensor(np.zeros((3, 8))) for _ in range(5)]
        emb, parts = head.project(pooled)
        assert not emb.data.any()
        assert len(parts) == 5

    def test_group_order_contract(self):
        rng = np.random.default_rng(8)
        head = self.make_head(rng)
        # tag each projection output through an identity-ish setup
        for i, w in enumerate(head.weights):
            w.data = np.zeros_like(w.data)
        for i, b in enumerate(head.biases):
            b.data = np.full_like(b.data, float(i + 1))
        pooled = [Tensor(np.zeros((1, 8))) for _ in range(5)]
        emb, _ = head.project(pooled)
        blocks = emb.data.reshape(5, 4)
        np.testing.assert_array_equal(blocks, np.outer(np.arange(1, 6), np.ones(4)))

    def test_uniform_kernels_reduce_to_mean_pool_baseline(self):
        rng = np.random.default_rng(9)
        head = self.make_head(rng)
        f = feature_map(rng, n=3, t=5, c=8)
        emb, _ = head.forward(f)
        parts = split(f)
        ref = []
        for loc, w, b in zip(parts, head.weights, head.biases):
            ref.append(loc.data.mean(axis=(1, 2)) @ w.data + b.data)
        np.testing.assert_allclose(emb.data, np.concatenate(ref, axis=1), atol=1e-6)

    def test_grad_check_pool_and_project(self):
        rng = np.random.default_rng(10)
        head = PyramidHead(channels=3, t_frames=4, embed_dim=2, rng=rng, dtype=np.float64)
        f = Tensor(rng.normal(size=(2, 4, 16, 3)))
        params = head.parameters()

        def loss_fn(*ps):
            emb, _ = head.forward(f)
            return E.tsum(E.power(emb, 2.0))

        assert E.grad_check(loss_fn, params) < 1e-4

    def test_grad_flows_to_feature_map(self):
        rng = np.random.default_rng(11)
        head = PyramidHead(channels=3, t_frames=4, embed_dim=2, rng=rng, dtype=np.float64)

        def loss_fn(f):
            emb, _ = head.forward(f)
            return E.tsum(E.power(emb, 2.0))

        f = Tensor(rng.normal(size=(1, 4, 16, 3)))
        assert E.grad_check(loss_fn, [f]) < 1e-4

    def test_pooled_set_size_checked(self):
        rng = np.random.default_rng(12)
        head = self.make_head(rng)
        with pytest.raises(ValueError):
            head.project([Tensor(np.zeros((1, 8)))] * 4)
