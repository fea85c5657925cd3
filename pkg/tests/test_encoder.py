"""Mixing layer, encoder block, stage pipeline, and checkpoint round-trip."""

import numpy as np
import pytest

from haarmix.checkpoint import load_checkpoint, named_tensors, save_checkpoint
from haarmix.encoder import (
    EncoderBlockParams,
    MixingLayerParams,
    StageConfig,
    StagePipelineParams,
    encoder_block_forward,
    mixing_layer_forward,
    pyramid_depth,
    stage_forward,
)
from haarmix.numerics import GradTape, ShapeMismatchError, Tensor, gradcheck, ops
from haarmix.tokens import SliceConvBank


def rand_feature(rng, dims):
    return Tensor(rng.standard_normal(dims).astype(np.float32))


def zero_params(container):
    for _, t in named_tensors(container):
        t.assign_(np.zeros(t.dims, dtype=np.float32))


def make_pipeline(rng, channels=4, grid=4, n_slices=2, blocks=1) -> StagePipelineParams:
    depth = pyramid_depth(grid, grid)
    return StagePipelineParams(
        bank=SliceConvBank.create(channels, n_slices, rng),
        downsample_weight=Tensor(
            (rng.standard_normal((3 * channels, channels)) * 0.2).astype(np.float32),
            requires_grad=True,
        ),
        downsample_bias=Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True),
        blocks=[EncoderBlockParams.create(channels, depth, rng) for _ in range(blocks)],
    )


class TestMixingLayer:
    def test_zero_fusion_is_pure_residual(self):
        rng = np.random.default_rng(0)
        p = MixingLayerParams.create(3, 2, rng)
        p.fuse_weight.assign_(np.zeros(p.fuse_weight.dims, dtype=np.float32))
        p.fuse_bias.assign_(np.zeros(p.fuse_bias.dims, dtype=np.float32))
        x = rand_feature(rng, (4, 4, 3))
        np.testing.assert_array_equal(mixing_layer_forward(x, p).data, x.data)

    def test_depth_three_fusion_width_for_8x8(self):
        rng = np.random.default_rng(1)
        p = MixingLayerParams.create(5, pyramid_depth(8, 8), rng)
        assert p.depth == 3
        assert p.fuse_weight.dims == (15, 5)
        out = mixing_layer_forward(rand_feature(rng, (8, 8, 5)), p)
        assert out.dims == (8, 8, 5)

    def test_constant_input_ignores_detail_weights(self):
        # constant input zeroes every detail subband, so perturbing the
        # detail rows of the channel-mix map cannot change the output
        rng = np.random.default_rng(2)
        c = 3
        p = MixingLayerParams.create(c, 2, rng)
        for lvl in p.levels:
            lvl.mix_bias.assign_(np.zeros(c, dtype=np.float32))
        x = Tensor(np.full((4, 4, c), 2.5, dtype=np.float32))
        base = mixing_layer_forward(x, p).data.copy()
        for lvl in p.levels:
            w = lvl.mix_weight.data.copy()
            w[c:, :] += rng.standard_normal((3 * c, c)).astype(np.float32)
            lvl.mix_weight.assign_(w)
        np.testing.assert_allclose(mixing_layer_forward(x, p).data, base, atol=1e-5)

    def test_depth_mismatch_rejected(self):
        rng = np.random.default_rng(3)
        p = MixingLayerParams.create(2, 2, rng)
        with pytest.raises(ShapeMismatchError, match="depth"):
            mixing_layer_forward(rand_feature(rng, (8, 8, 2)), p)

    def test_odd_dims_rejected(self):
        rng = np.random.default_rng(4)
        p = MixingLayerParams.create(2, 1, rng)
        with pytest.raises(ShapeMismatchError):
            mixing_layer_forward(rand_feature(rng, (3, 4, 2)), p)

    def test_gradcheck(self):
        rng = np.random.default_rng(5)
        p = MixingLayerParams.create(2, 2, rng)
        x = rand_feature(rng, (4, 4, 2))
        err = gradcheck(lambda t: ops.mean(mixing_layer_forward(t, p)), x)
        assert err <= 1e-4


class TestEncoderBlock:
    def test_all_zero_parameters_give_identity(self):
        rng = np.random.default_rng(0)
        p = EncoderBlockParams.create(2, 2, rng)
        zero_params(p)
        x = rand_feature(rng, (4, 4, 2))
        np.testing.assert_array_equal(encoder_block_forward(x, p).data, x.data)

    def test_shape_contract(self):
        rng = np.random.default_rng(1)
        p = EncoderBlockParams.create(8, pyramid_depth(16, 16), rng)
        out = encoder_block_forward(rand_feature(rng, (16, 16, 8)), p)
        assert out.dims == (16, 16, 8)

    def test_gradcheck(self):
        rng = np.random.default_rng(2)
        p = EncoderBlockParams.create(2, 2, rng)
        x = rand_feature(rng, (4, 4, 2))
        err = gradcheck(lambda t: ops.mean(encoder_block_forward(t, p)), x)
        assert err <= 1e-4

    def test_no_dead_parameters(self):
        rng = np.random.default_rng(3)
        p = EncoderBlockParams.create(4, 2, rng)
        x = rand_feature(rng, (4, 4, 4))
        r = rand_feature(rng, (4, 4, 4))
        params = [t for _, t in named_tensors(p)]
        with GradTape() as tape:
            loss = ops.sum_(ops.mul(encoder_block_forward(x, p), r))
        grads = tape.backward(loss, params)
        dead = [
            name
            for (name, t) in named_tensors(p)
            if not np.any(np.abs(grads[t]) > 0)
        ]
        assert not dead, f"parameters with all-zero gradients: {dead}"


class TestStageForward:
    def test_stage1_returns_no_aux(self):
        rng = np.random.default_rng(0)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(4)]
        embs, aux = stage_forward(feats, pipe, StageConfig(1), training=True)
        assert aux is None
        assert len(embs) == 4

    def test_inference_returns_no_aux_and_is_deterministic(self):
        rng = np.random.default_rng(1)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(2)]
        e1, aux = stage_forward(feats, pipe, StageConfig(3), training=False)
        e2, _ = stage_forward(feats, pipe, StageConfig(3), training=False)
        assert aux is None
        for a, b in zip(e1, e2):
            np.testing.assert_array_equal(a.data, b.data)

    def test_embeddings_are_unit_norm(self):
        rng = np.random.default_rng(2)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(3)]
        for stage in (1, 2, 3):
            embs, _ = stage_forward(feats, pipe, StageConfig(stage), training=True)
            for e in embs:
                assert abs(np.linalg.norm(e.data) - 1.0) <= 1e-6

    def test_training_stage2_produces_full_aux(self):
        rng = np.random.default_rng(3)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(4)]
        embs, aux = stage_forward(
            feats, pipe, StageConfig(2), training=True, labels=[0, 1, 0, 1], rng_seed=5
        )
        assert aux is not None
        assert len(aux.original_maps) == 4
        assert len(aux.enhanced_maps) == 4
        assert len(aux.enhanced_tokens) == 4
        assert all(m.kind == "enhanced" for m in aux.enhanced_maps)
        assert all(t.dims == (16, 4) for t in aux.enhanced_tokens)
        assert [m.identity_label for m in aux.original_maps] == [0, 1, 0, 1]
        k = aux.original_selections[0].k
        assert k == max(1, round(0.3 * 16))

    def test_enhanced_branch_never_touches_embeddings(self):
        rng = np.random.default_rng(4)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(2)]
        before, _ = stage_forward(feats, pipe, StageConfig(3), training=False)
        pipe.downsample_weight.assign_(
            rng.standard_normal(pipe.downsample_weight.dims).astype(np.float32)
        )
        after, _ = stage_forward(feats, pipe, StageConfig(3), training=False)
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a.data, b.data)

    def test_enhanced_branch_flag_off(self):
        rng = np.random.default_rng(5)
        pipe = make_pipeline(rng)
        feats = [rand_feature(rng, (4, 4, 4)) for _ in range(2)]
        _, aux = stage_forward(
            feats, pipe, StageConfig(2), training=True, enhanced_branch=False
        )
        assert aux is not None
        assert aux.enhanced_maps == [] and aux.enhanced_tokens == []
        assert len(aux.original_selections) == 2

    def test_bad_stage_index_rejected(self):
        with pytest.raises(ValueError):
            StageConfig(0)


class TestCheckpoint:
    def test_round_trip_restores_every_tensor(self, tmp_path):
        rng = np.random.default_rng(0)
        src = make_pipeline(rng)
        save_checkpoint(tmp_path / "ckpt", src)
        dst = make_pipeline(np.random.default_rng(99))
        load_checkpoint(tmp_path / "ckpt", dst)
        for (name_a, a), (_, b) in zip(named_tensors(src), named_tensors(dst)):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name_a)

    def test_shape_mismatch_rejected(self, tmp_path):
        rng = np.random.default_rng(1)
        save_checkpoint(tmp_path / "ckpt", make_pipeline(rng))
        other = make_pipeline(rng, channels=8, n_slices=2)
        with pytest.raises(ShapeMismatchError):
            load_checkpoint(tmp_path / "ckpt", other)

    def test_missing_entry_rejected(self, tmp_path):
        rng = np.random.default_rng(2)
        model = make_pipeline(rng)
        save_checkpoint(tmp_path / "ckpt", model)
        manifest = tmp_path / "ckpt" / "manifest.txt"
        lines = manifest.read_text().splitlines()
        manifest.write_text("\n".join(lines[1:]) + "\n")
        with pytest.raises(ShapeMismatchError, match="missing"):
            load_checkpoint(tmp_path / "ckpt", model)
