import numpy as np
import pytest

import gaitrig.engine as E
from gaitrig.engine import Parameter, Tensor
from gaitrig.graph import GaitGraph
from gaitrig.network import (
    DEFAULT_CHANNEL_PLAN,
    GaitModel,
    SiameseSTGCN,
    concat_features,
    count_parameters,
    load_checkpoint,
    save_checkpoint,
)

TINY_PLAN = ((3, 4, 1), (4, 6, 2))


def batch(rng, n=2, c=3, t=8, v=16, dtype=np.float32):
    return Tensor(rng.normal(size=(n, c, t, v)).astype(dtype))


class TestSiameseContract:
    def test_identical_inputs_identical_outputs_bitwise(self):
        rng = np.random.default_rng(0)
        net = SiameseSTGCN(TINY_PLAN, seed=1)
        x = rng.normal(size=(2, 8, 16, 3)).astype(np.float32)
        f_jst, f_ast = net.forward(Tensor(x.copy()), Tensor(x.copy()), training=False)
        assert np.array_equal(f_jst.data, f_ast.data)

    def test_parameter_count_independent_of_streams(self):
        net = SiameseSTGCN(TINY_PLAN, seed=1)
        before = [p.name for p in net.parameters()]
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 8, 16, 3)).astype(np.float32))
        y = Tensor(rng.normal(size=(1, 8, 16, 3)).astype(np.float32))
        net.forward(x, y, training=False)
        assert [p.name for p in net.parameters()] == before
        assert len(set(before)) == len(before)

    def test_one_step_changes_both_streams_identically(self):
        rng = np.random.default_rng(2)
        net = SiameseSTGCN(TINY_PLAN, seed=3)
        xj = Tensor(rng.normal(size=(2, 8, 16, 3)).astype(np.float32))
        xa = Tensor(rng.normal(size=(2, 8, 16, 3)).astype(np.float32))
        f_jst, f_ast = net.forward(xj, xa, training=True)
        loss = E.tsum(E.add(E.power(f_jst, 2.0), E.power(f_ast, 2.0)))
        loss.backward()
        for p in net.parameters():
            p.data = p.data - 0.01 * p.grad
        # shared weights: identical inputs still produce identical outputs
        g_jst, g_ast = net.forward(Tensor(xj.data.copy()), Tensor(xj.data.copy()), training=False)
        assert np.array_equal(g_jst.data, g_ast.data)

    def test_zero_input_zero_bias_gives_zero_output(self):
        net = SiameseSTGCN(TINY_PLAN, seed=4)
        x = Tensor(np.zeros((2, 8, 16, 3), dtype=np.float32))
        f_jst, _ = net.forward(x, x, training=True)
        assert not f_jst.data.any()


class TestHandComposedOracle:
    def test_two_block_net_matches_hand_composition(self):
        # 2-node line graph, (C=3, T=4, V=2) input, batchnorm off
        graph = GaitGraph(2, ((0, 1),), 0)
        net = SiameseSTGCN(TINY_PLAN, seed=5, use_batchnorm=False, graph=graph)
        rng = np.random.default_rng(6)
        x = rng.normal(size=(1, 4, 2, 3)).astype(np.float32)
        out = net.forward_stream(Tensor(x.copy()), training=False).data

        a = net.a_norm
        h = x.astype(np.float64)
        for i, block in enumerate(net.blocks):
            w = block.spatial_weight.data.astype(np.float64)
            y = np.einsum("ntjc,kji,kco->ntio", h, a, w) + block.spatial_bias.data
            y = np.maximum(y, 0.0)
            wt = block.temporal_weight.data.astype(np.float64)
            pad = 4
            yp = np.pad(y, ((0, 0), (pad, pad), (0, 0), (0, 0)))
            t_out = (y.shape[1] + 2 * pad - 9) // block.stride + 1
            z = np.zeros((1, t_out, 2, wt.shape[0]))
            for o in range(t_out):
                window = yp[:, o * block.stride : o * block.stride + 9]
                z[:, o] = np.einsum("nkvc,ock->nvo", window, wt)
            z = z + block.temporal_bias.data
            if block.residual:
                res = h[:, :: block.stride]
                if block.residual_weight is not None:
                    res = res @ block.residual_weight.data.astype(np.float64)
                z = z + res
            h = np.maximum(z, 0.0)
        np.testing.assert_allclose(out, h, atol=1e-4)


class TestConcatFeatures:
    def test_channel_dim_doubles_and_slices_recover(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(2, 15, 16, 128)).astype(np.float32))
        b = Tensor(rng.normal(size=(2, 15, 16, 128)).astype(np.float32))
        cat = concat_features(a, b)
        assert cat.shape == (2, 15, 16, 256)
        assert np.array_equal(cat.data[..., :128], a.data)
        assert np.array_equal(cat.data[..., 128:], b.data)

    def test_real_stream_first(self):
        a = Tensor(np.full((1, 2, 2, 3), 1.0))
        b = Tensor(np.full((1, 2, 2, 3), 2.0))
        cat = concat_features(a, b)
        assert (cat.data[..., :3] == 1.0).all() and (cat.data[..., 3:] == 2.0).all()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            concat_features(Tensor(np.zeros((1, 2, 2, 3))), Tensor(np.zeros((1, 3, 2, 3))))


class TestParameterCount:
    def test_single_spatial_weight(self):
        w = Parameter("w", np.zeros((3, 3, 32), dtype=np.float32))
        assert w.size == 288

    def test_default_model_in_budget_band(self):
        n = count_parameters(GaitModel(seed=0))
        assert 0.42e6 <= n <= 0.62e6

    def test_doubling_plan_quadruples_spatial_weights(self):
        plan1 = ((3, 8, 1), (8, 16, 2))
        plan2 = ((3, 16, 1), (16, 32, 2))
        def spatial_total(plan):
            net = SiameseSTGCN(plan, seed=0)
            return sum(b.spatial_weight.size for b in net.blocks)
        s1, s2 = spatial_total(plan1), spatial_total(plan2)
        # 3*C_in*C_out per block; the first block keeps C_in=3 fixed
        expect = 3 * (3 * 16 + 16 * 32)
        assert s2 == expect
        assert s2 / s1 == pytest.approx((3 * 16 + 16 * 32) / (3 * 8 + 8 * 16))

    def test_out_frames_default_plan(self):
        net = SiameseSTGCN(DEFAULT_CHANNEL_PLAN, seed=0)
        assert net.out_frames(60) == 15


class TestEvalMode:
    def test_eval_matches_train_when_batchnorm_off(self):
        rng = np.random.default_rng(8)
        model = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=9, use_batchnorm=False)
        f_j, f_a = batch(rng), batch(rng)
        train_out = model.forward(f_j, f_a, training=True).data
        eval_out = model.forward(Tensor(f_j.data.copy()), Tensor(f_a.data.copy()),
                                 training=False).data
        assert np.array_equal(train_out, eval_out)

    def test_eval_uses_frozen_statistics(self):
        rng = np.random.default_rng(9)
        model = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=10)
        f_j, f_a = batch(rng), batch(rng)
        model.forward(f_j, f_a, training=True)  # updates running stats
        one = model.forward(f_j, f_a, training=False).data
        two = model.forward(f_j, f_a, training=False).data
        assert np.array_equal(one, two)  # eval does not mutate statistics


class TestCheckpoint:
    def test_roundtrip_byte_exact(self, tmp_path):
        model = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=11)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        meta = {"seed": 11, "config_hash": "abc"}
        save_checkpoint(p1, model.state(), meta)
        tensors, loaded_meta = load_checkpoint(p1)
        assert loaded_meta == meta
        save_checkpoint(p2, tensors, loaded_meta)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_state_restores_forward(self, tmp_path):
        rng = np.random.default_rng(12)
        model = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=13)
        f_j, f_a = batch(rng), batch(rng)
        model.forward(f_j, f_a, training=True)
        expected = model.forward(f_j, f_a, training=False).data
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model.state())
        fresh = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=999)
        fresh.load_state(load_checkpoint(path)[0])
        out = fresh.forward(Tensor(f_j.data.copy()), Tensor(f_a.data.copy()),
                            training=False).data
        assert np.array_equal(out, expected)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "x.ckpt"
        path.write_bytes(b"garbage")
        with pytest.raises(ValueError):
            load_checkpoint(path)

    def test_missing_tensor_rejected(self, tmp_path):
        model = GaitModel(TINY_PLAN, t_frames=8, embed_dim=4, seed=14)
        state = model.state()
        state.pop(model.parameters()[0].name)
        with pytest.raises(KeyError):
            model.load_state(state)
