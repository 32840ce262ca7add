"""Deterministic parametric motion edits with exact feature-column masking.

These edits are the ground-truth counterpart to the diffusion editor: each
edit touches only the position/velocity columns of its target joints and is
a pure function of (motion, spec), which makes instruction quality checkable
by re-applying a parsed instruction and comparing bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .motion import (
    BodyPartMask,
    MotionLayout,
    MotionSequence,
    PART_NAMES,
    Skeleton,
    default_skeleton,
)
from .synth import rot_x

TRANSFORM_KINDS = (
    "elevate",
    "extend",
    "speed_scale",
    "amplitude_scale",
    "phase_shift",
    "mirror",
)

# magnitude bounds per kind; mirror takes no magnitude
MAGNITUDE_BOUNDS = {
    "elevate": (-1.2, 1.2),
    "extend": (-0.5, 1.0),
    "speed_scale": (-0.5, 1.0),
    "amplitude_scale": (-0.8, 2.0),
    "phase_shift": (-20.0, 20.0),
    "mirror": (0.0, 0.0),
}


@dataclass(frozen=True)
class EditSpec:
    part_name: str
    transform_kind: str
    magnitude: float = 0.0
    joint_subset: tuple | None = None

    def __post_init__(self):
        if self.part_name not in PART_NAMES:
            raise ValueError(f"unknown body part {self.part_name!r}")
        if self.transform_kind not in TRANSFORM_KINDS:
            raise ValueError(f"unknown transform {self.transform_kind!r}")
        low, high = MAGNITUDE_BOUNDS[self.transform_kind]
        if not low <= self.magnitude <= high:
            raise ValueError(
                f"{self.transform_kind} magnitude {self.magnitude} out of "
                f"bounds [{low}, {high}]"
            )
        if self.joint_subset is not None:
            object.__setattr__(self, "joint_subset", tuple(sorted(self.joint_subset)))


def _edit_joints(spec: EditSpec, skeleton: Skeleton) -> list:
    if spec.joint_subset is not None:
        joints = list(spec.joint_subset)
        if any(not 1 <= j < skeleton.joint_count for j in joints):
            raise ValueError("joint_subset out of range for skeleton")
        if spec.part_name != "full_body":
            part = skeleton.part_sets[spec.part_name]
            if any(j not in part for j in joints):
                raise ValueError("joint_subset escapes the edit's body part")
        return joints
    if spec.part_name == "full_body":
        return list(range(1, skeleton.joint_count))
    return sorted(skeleton.part_sets[spec.part_name])


def edit_feature_mask(spec: EditSpec, layout: MotionLayout, skeleton: Skeleton) -> BodyPartMask:
    """The exact feature columns an edit may touch (subset of the part mask)."""
    mask = np.zeros(layout.dim, dtype=np.float32)
    for j in _edit_joints(spec, skeleton):
        mask[layout.joint_pos_cols(j)] = 1.0
        mask[layout.joint_vel_cols(j)] = 1.0
    return BodyPartMask(mask, spec.part_name)


def _warp_circular(arr: np.ndarray, shift: float) -> np.ndarray:
    """Sample arr (T, ...) at fractional frame t + shift, wrapping around."""
    T = arr.shape[0]
    src = (np.arange(T) + shift) % T
    lo = np.floor(src).astype(int) % T
    hi = (lo + 1) % T
    w = (src - np.floor(src)).reshape((T,) + (1,) * (arr.ndim - 1))
    return (1 - w) * arr[lo] + w * arr[hi]


def _warp_scaled(arr: np.ndarray, scale: float) -> np.ndarray:
    T = arr.shape[0]
    src = np.clip(np.arange(T) * scale, 0, T - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, T - 1)
    w = (src - lo).reshape((T,) + (1,) * (arr.ndim - 1))
    return (1 - w) * arr[lo] + w * arr[hi]


def apply_parametric_edit(
    x: MotionSequence, spec: EditSpec, skeleton: Skeleton | None = None
) -> MotionSequence:
    """Apply the edit; columns outside the edit's feature mask are untouched.

    Velocity columns get the same frame-wise linear map (or time warp) as the
    positions they pair with, so the edit commutes with the forward-difference
    rule used at synthesis time and mirror stays an exact involution.
    """
    skeleton = skeleton or default_skeleton()
    lay = x.layout
    if not lay.structured or lay.joint_count != skeleton.joint_count:
        raise ValueError("motion layout does not match skeleton")
    if spec.transform_kind != "mirror" and spec.magnitude == 0.0:
        return MotionSequence(x.frames.copy(), x.fps, lay)

    joints = _edit_joints(spec, skeleton)
    T, K = x.T, lay.joint_count
    # root rows stay zero: the root is the origin of the local frame
    pos = np.zeros((T, K, 3), dtype=np.float64)
    vel = np.zeros((T, K, 3), dtype=np.float64)
    pos[:, 1:] = x.frames[:, lay.pos_block].astype(np.float64).reshape(T, K - 1, 3)
    vel[:, 1:] = x.frames[:, lay.vel_block].astype(np.float64).reshape(T, K - 1, 3)
    kind, m = spec.transform_kind, spec.magnitude

    if kind in ("elevate", "extend"):
        pivot = min(skeleton.parent[j] for j in joints)
        for arr in (pos, vel):
            piv = arr[:, pivot : pivot + 1, :]
            rel = arr[:, joints, :] - piv
            moved = rot_x(rel, m) if kind == "elevate" else (1.0 + m) * rel
            arr[:, joints, :] = piv + moved
    elif kind == "speed_scale":
        pos[:, joints, :] = _warp_scaled(pos[:, joints, :], 1.0 + m)
        vel[:, joints, :] = (1.0 + m) * _warp_scaled(vel[:, joints, :], 1.0 + m)
    elif kind == "amplitude_scale":
        for arr, keep_mean in ((pos, True), (vel, False)):
            sel = arr[:, joints, :]
            mean = sel.mean(axis=0, keepdims=True) if keep_mean else 0.0
            arr[:, joints, :] = mean + (1.0 + m) * (sel - mean)
    elif kind == "phase_shift":
        pos[:, joints, :] = _warp_circular(pos[:, joints, :], m)
        vel[:, joints, :] = _warp_circular(vel[:, joints, :], m)
    elif kind == "mirror":
        jset = set(joints)
        for arr in (pos, vel):
            src = arr.copy()
            for j in joints:
                other = skeleton.mirror_of(j)
                if other != j and other not in jset:
                    raise ValueError(
                        "mirror requires both sides of each pair in the subset"
                    )
                arr[:, j] = src[:, other]
            arr[:, joints, 0] *= -1.0

    frames = x.frames.copy()
    pos_view = frames[:, lay.pos_block].reshape(T, K - 1, 3)
    vel_view = frames[:, lay.vel_block].reshape(T, K - 1, 3)
    for j in joints:
        pos_view[:, j - 1] = pos[:, j].astype(np.float32)
        vel_view[:, j - 1] = vel[:, j].astype(np.float32)
    return MotionSequence(frames, x.fps, lay)
