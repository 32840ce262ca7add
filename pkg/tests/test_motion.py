"""Motion data model: layout slices, skeleton, joint recovery, file codec."""

import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motioncoach.motion import (
    DEFAULT_ROOT_HEIGHT,
    BodyPartMask,
    JointTrajectory,
    MotionLayout,
    MotionSequence,
    body_part_mask,
    default_skeleton,
    joints_from_motion,
    read_motion,
    write_motion,
)
from motioncoach.synth import PRIMITIVES, synth_motion


def test_layout_blocks_partition_every_column():
    lay = MotionLayout.for_joints(22)
    assert lay.dim == 6 * 22 + 2
    cols = np.zeros(lay.dim, dtype=int)
    cols[lay.root_cols] += 1
    cols[lay.pos_block] += 1
    cols[lay.vel_block] += 1
    cols[lay.contact_cols] += 1
    assert np.all(cols == 1)


def test_layout_joint_columns_disjoint_and_inside_blocks():
    lay = MotionLayout.for_joints(22)
    seen = set()
    for j in range(1, 22):
        pc = set(range(lay.dim)[lay.joint_pos_cols(j)])
        vc = set(range(lay.dim)[lay.joint_vel_cols(j)])
        assert len(pc) == 3 and len(vc) == 3
        assert not (pc | vc) & seen
        seen |= pc | vc
    block = set(range(lay.dim)[lay.pos_block]) | set(range(lay.dim)[lay.vel_block])
    assert seen == block


def test_skeleton_mirror_is_involution():
    sk = default_skeleton()
    for j in range(sk.joint_count):
        assert sk.mirror_of(sk.mirror_of(j)) == j


def test_part_sets_cover_limbs_and_exclude_root():
    sk = default_skeleton()
    upper = sk.part_sets["upper_body"]
    lower = sk.part_sets["lower_body"]
    assert 0 not in upper and 0 not in lower
    assert not upper & lower


def test_body_part_mask_full_vs_parts():
    sk = default_skeleton()
    lay = sk.layout()
    full = body_part_mask("full_body", lay, sk)
    assert np.all(full.mask == 1)
    up = body_part_mask("upper_body", lay, sk)
    lo = body_part_mask("lower_body", lay, sk)
    # parts never touch root or contact columns
    assert np.all(up.mask[lay.root_cols] == 0)
    assert np.all(up.mask[lay.contact_cols] == 0)
    assert np.all(up.mask * lo.mask == 0)


def test_mask_rejects_non_binary():
    with pytest.raises(ValueError):
        BodyPartMask(np.array([0.5, 1.0]), "upper_body")


def test_motion_sequence_validation():
    lay = MotionLayout.for_joints(22)
    with pytest.raises(ValueError):
        MotionSequence(np.zeros((4, lay.dim - 1)), 20, lay)
    bad = np.zeros((4, lay.dim))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        MotionSequence(bad, 20, lay)


def test_joint_trajectory_validation():
    with pytest.raises(ValueError):
        JointTrajectory(np.zeros((3, 5, 2)))


def test_joints_from_motion_static_pose():
    sk = default_skeleton()
    lay = sk.layout()
    frames = np.zeros((5, lay.dim), dtype=np.float32)
    frames[:, 3] = DEFAULT_ROOT_HEIGHT
    rest = sk.rest_local_positions()
    frames[:, lay.pos_block] = np.tile(rest[1:].ravel(), (5, 1))
    traj = joints_from_motion(MotionSequence(frames, 20, lay), sk)
    assert traj.positions.shape == (5, sk.joint_count, 3)
    # with zero root motion the pose is the rest pose lifted by root height
    expect = rest.copy()
    expect[:, 1] += DEFAULT_ROOT_HEIGHT
    assert np.allclose(traj.positions[0], expect, atol=1e-6)
    assert np.allclose(traj.positions[0], traj.positions[-1], atol=1e-6)


def test_codec_roundtrip_bitexact(tmp_path):
    x = synth_motion("wave", {}, 24, seed=3)
    p = tmp_path / "m.cgtm"
    write_motion(x, p)
    y = read_motion(p)
    assert y.fps == x.fps
    assert np.array_equal(x.frames, y.frames)


def test_codec_rejects_corrupt_files(tmp_path):
    x = synth_motion("squat", {}, 12, seed=0)
    p = tmp_path / "m.cgtm"
    write_motion(x, p)
    blob = p.read_bytes()
    (tmp_path / "bad_magic.cgtm").write_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        read_motion(tmp_path / "bad_magic.cgtm")
    (tmp_path / "trunc.cgtm").write_bytes(blob[:-7])
    with pytest.raises(ValueError):
        read_motion(tmp_path / "trunc.cgtm")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 12), st.integers(1, 40), st.integers(0, 2**31 - 1))
def test_codec_roundtrip_raw_layouts(T, D, seed):
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((T, D)).astype(np.float32)
    x = MotionSequence(frames, 30, MotionLayout.raw(D))
    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "m.cgtm")
        write_motion(x, p)
        y = read_motion(p)
    assert np.array_equal(x.frames, y.frames)
    assert y.fps == 30


def test_synth_primitives_finite_and_seeded():
    for name in sorted(PRIMITIVES):
        a = synth_motion(name, {}, 16, seed=5)
        b = synth_motion(name, {}, 16, seed=5)
        assert np.all(np.isfinite(a.frames))
        assert np.array_equal(a.frames, b.frames)
    # phase-bearing primitives respond to the seed
    for name in ("wave", "walk_cycle"):
        a = synth_motion(name, {}, 16, seed=5)
        c = synth_motion(name, {}, 16, seed=6)
        assert not np.array_equal(a.frames, c.frames)


def test_synth_rejects_bad_inputs():
    with pytest.raises(ValueError):
        synth_motion("moonwalk", {}, 16)
    with pytest.raises(ValueError):
        synth_motion("wave", {}, 4)
    with pytest.raises(ValueError):
        synth_motion("wave", {"amplitude": 9.0}, 16)


def test_synth_velocities_match_forward_differences():
    x = synth_motion("arm_raise", {}, 20, seed=1)
    lay = x.layout
    pos = x.frames[:, lay.pos_block].astype(np.float64)
    vel = x.frames[:, lay.vel_block].astype(np.float64)
    fd = (pos[1:] - pos[:-1]) * x.fps
    # interior frames: velocity features are the forward differences
    assert np.allclose(vel[:-1], fd, atol=1e-2)
