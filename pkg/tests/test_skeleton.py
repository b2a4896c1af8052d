import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitrig.fusion import SkeletonFrame32
from gaitrig.skeleton import (
    BONE_EDGES,
    BONE_PARENT,
    JOINT16_TO_SOURCE,
    DegenerateSkeletonError,
    IncompleteSkeletonError,
    build_dual_skeleton,
    compute_bones,
    compute_height,
    compute_sb_shr,
    select_joints,
)

from helpers import random_rotation


def random_skeleton(rng):
    return rng.normal(scale=400.0, size=(16, 3))


def posed_skeleton(neck=250.0, upper=300.0, lower=200.0, thigh=450.0, shank=400.0,
                   sb=400.0, hip=320.0):
    """Upright skeleton with exactly known segment lengths."""
    s = np.zeros((16, 3))
    s[0] = (0, 1000.0, 0)                       # pelvis
    s[1] = s[0] + (0, lower, 0)                 # navel
    s[2] = s[1] + (0, upper, 0)                 # neck
    s[15] = s[2] + (0, neck, 0)                 # head
    s[3] = s[2] + (-sb / 2, -30.0, 0)           # shoulders
    s[6] = s[2] + (sb / 2, -30.0, 0)
    s[4] = s[3] + (-10.0, -280.0, 0)            # elbows / wrists
    s[7] = s[6] + (10.0, -280.0, 0)
    s[5] = s[4] + (0, -260.0, 0)
    s[8] = s[7] + (0, -260.0, 0)
    s[9] = s[0] + (-hip / 2, 0, 0)              # hips
    s[12] = s[0] + (hip / 2, 0, 0)
    s[10] = s[9] + (0, -thigh, 0)               # knees
    s[13] = s[12] + (0, -thigh, 0)
    s[11] = s[10] + (0, -shank, 0)              # ankles
    s[14] = s[13] + (0, -shank, 0)
    return s


class TestSelectJoints:
    def test_selects_mapped_positions(self):
        frame = SkeletonFrame32(0, "OJ")
        for j in range(32):
            frame.set_joint(j, (float(j), 2.0 * j, -1.0 * j), 1.0)
        s = select_joints(frame)
        for i, src in enumerate(JOINT16_TO_SOURCE):
            assert np.array_equal(s[i], [src, 2.0 * src, -1.0 * src])

    def test_missing_mapped_joint_is_error(self):
        frame = SkeletonFrame32(0, "OJ")
        for j in range(32):
            if j != 7:  # left wrist source index
                frame.set_joint(j, (0.0, 0.0, 0.0), 1.0)
        with pytest.raises(IncompleteSkeletonError, match="l_wrist"):
            select_joints(frame)

    def test_unmapped_missing_joints_ignored(self):
        frame = SkeletonFrame32(0, "OJ")
        for j in JOINT16_TO_SOURCE:
            frame.set_joint(j, (1.0, 1.0, 1.0), 1.0)
        assert select_joints(frame).shape == (16, 3)

    def test_mapping_is_bijective(self):
        assert len(set(JOINT16_TO_SOURCE)) == 16


class TestBones:
    def test_tree_shape(self):
        assert len(BONE_PARENT) == 15
        assert len(BONE_EDGES) == 15
        assert 0 not in BONE_PARENT  # pelvis is the root
        # every non-root joint is the child of exactly one bone
        assert sorted(BONE_PARENT) == list(range(1, 16))

    def test_translation_invariant(self):
        rng = np.random.default_rng(0)
        s = random_skeleton(rng)
        shifted = s + np.array([123.0, -45.0, 6.0])
        np.testing.assert_allclose(compute_bones(shifted), compute_bones(s), atol=1e-9)

    def test_coincident_parent_child_gives_zero(self):
        s = np.zeros((16, 3))
        assert np.array_equal(compute_bones(s), np.zeros((16, 3)))

    def test_matches_direct_subtraction(self):
        rng = np.random.default_rng(1)
        s = random_skeleton(rng)
        bones = compute_bones(s)
        for child, parent in BONE_PARENT.items():
            assert np.array_equal(bones[child], s[parent] - s[child])
        assert np.array_equal(bones[0], np.zeros(3))


class TestHeight:
    def test_analytic_sum(self):
        s = posed_skeleton(neck=250, upper=300, lower=200, thigh=450, shank=400)
        assert compute_height(s) == pytest.approx(1600.0, abs=1e-12)

    def test_degenerate_all_coincident(self):
        assert compute_height(np.zeros((16, 3))) == 0.0

    def test_matches_norm_oracle(self):
        rng = np.random.default_rng(2)
        s = random_skeleton(rng)
        n = np.linalg.norm
        expect = (
            n(s[2] - s[15]) + n(s[1] - s[2]) + n(s[0] - s[1])
            + (n(s[12] - s[13]) + n(s[13] - s[14]) + n(s[9] - s[10]) + n(s[10] - s[11])) / 2
        )
        assert compute_height(s) == pytest.approx(expect, abs=1e-9)

    def test_rigid_motion_invariant(self):
        rng = np.random.default_rng(3)
        s = random_skeleton(rng)
        moved = s @ random_rotation(rng).T + np.array([9.0, 8.0, 7.0])
        assert compute_height(moved) == pytest.approx(compute_height(s), abs=1e-9)


class TestSbShr:
    def test_arithmetic(self):
        s = posed_skeleton(sb=400.0, hip=320.0)
        sb, shr = compute_sb_shr(s)
        assert sb == pytest.approx(400.0)
        assert shr == pytest.approx(1.25)

    def test_mirror_invariant(self):
        rng = np.random.default_rng(4)
        s = random_skeleton(rng)
        mirrored = s * np.array([-1.0, 1.0, 1.0])
        assert compute_sb_shr(mirrored) == pytest.approx(compute_sb_shr(s))

    def test_zero_hip_width_rejected(self):
        s = posed_skeleton()
        s[12] = s[9]
        with pytest.raises(DegenerateSkeletonError):
            compute_sb_shr(s)

    def test_matches_norm_oracle(self):
        rng = np.random.default_rng(5)
        s = random_skeleton(rng)
        sb, shr = compute_sb_shr(s)
        assert sb == pytest.approx(np.linalg.norm(s[6] - s[3]), abs=1e-12)
        assert shr == pytest.approx(
            np.linalg.norm(s[6] - s[3]) / np.linalg.norm(s[12] - s[9]), abs=1e-12
        )


class TestDualSkeleton:
    def test_structure_matches(self):
        rng = np.random.default_rng(6)
        dual = build_dual_skeleton(random_skeleton(rng))
        assert dual.pseudo.shape == dual.real.shape == (16, 3)

    def test_values_match_component_oracles(self):
        rng = np.random.default_rng(7)
        s = random_skeleton(rng)
        dual = build_dual_skeleton(s)
        bones = compute_bones(s)
        for child in range(1, 16):
            assert np.array_equal(dual.pseudo[child], bones[child])
        sb, shr = compute_sb_shr(s)
        assert dual.pseudo[0][0] == compute_height(s)
        assert dual.pseudo[0][1] == sb
        assert dual.pseudo[0][2] == shr

    def test_translation_leaves_pseudo_unchanged(self):
        rng = np.random.default_rng(8)
        s = random_skeleton(rng)
        shifted = s + np.array([50.0, -20.0, 75.0])
        np.testing.assert_allclose(
            build_dual_skeleton(shifted).pseudo, build_dual_skeleton(s).pseudo, atol=1e-9
        )

    def test_degenerate_error_propagates(self):
        s = posed_skeleton()
        s[12] = s[9]
        with pytest.raises(DegenerateSkeletonError):
            build_dual_skeleton(s)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_uniform_scaling_property(seed, scale):
    """H and SB scale linearly; SHR is scale-free."""
    rng = np.random.default_rng(seed)
    s = random_skeleton(rng)
    h0, (sb0, shr0) = compute_height(s), compute_sb_shr(s)
    h1, (sb1, shr1) = compute_height(s * scale), compute_sb_shr(s * scale)
    assert h1 == pytest.approx(scale * h0, rel=1e-9)
    assert sb1 == pytest.approx(scale * sb0, rel=1e-9)
    assert shr1 == pytest.approx(shr0, rel=1e-9)
