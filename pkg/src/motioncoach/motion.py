"""Motion data model: feature layout, skeleton, joint recovery, and file codec.

A motion clip is a T x D matrix of float32 features. D decomposes as
[root yaw rate (1), root planar velocity (2), root height (1),
joint local positions (3 per non-root joint), joint local velocities
(3 per non-root joint), foot contacts (4)], so D = 6K + 2 for K joints.
Files use the binary "CGTM" format: 16-byte header (magic, u32 T, u32 D,
u32 fps, little-endian) followed by T*D float32 values, row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CGTM"
CONTACT_DIM = 4
ROOT_DIM = 4  # yaw rate, vx, vz, height
DEFAULT_ROOT_HEIGHT = 0.95


@dataclass(frozen=True)
class MotionLayout:
    """How the D feature columns decompose. joint_count None means raw/opaque."""

    joint_count: int | None
    raw_dim: int | None = None

    @classmethod
    def for_joints(cls, joint_count: int) -> "MotionLayout":
        if joint_count < 2:
            raise ValueError("need at least a root and one joint")
        return cls(joint_count=joint_count)

    @classmethod
    def raw(cls, dim: int) -> "MotionLayout":
        return cls(joint_count=None, raw_dim=int(dim))

    @classmethod
    def infer(cls, dim: int) -> "MotionLayout":
        """Standard layout when D = 6K + 2 fits, raw otherwise."""
        if dim > 8 and (dim - 2) % 6 == 0:
            return cls.for_joints((dim - 2) // 6)
        return cls.raw(dim)

    @property
    def structured(self) -> bool:
        return self.joint_count is not None

    @property
    def dim(self) -> int:
        if self.joint_count is None:
            return int(self.raw_dim)
        return ROOT_DIM + 6 * (self.joint_count - 1) + CONTACT_DIM

    def _need_structure(self):
        if not self.structured:
            raise ValueError("raw layout has no structured feature blocks")

    @property
    def root_cols(self) -> slice:
        self._need_structure()
        return slice(0, ROOT_DIM)

    @property
    def pos_block(self) -> slice:
        self._need_structure()
        return slice(ROOT_DIM, ROOT_DIM + 3 * (self.joint_count - 1))

    @property
    def vel_block(self) -> slice:
        self._need_structure()
        start = ROOT_DIM + 3 * (self.joint_count - 1)
        return slice(start, start + 3 * (self.joint_count - 1))

    @property
    def contact_cols(self) -> slice:
        self._need_structure()
        return slice(self.dim - CONTACT_DIM, self.dim)

    def joint_pos_cols(self, joint: int) -> slice:
        """Columns of joint's local position; joint must be non-root."""
        self._need_structure()
        if not 1 <= joint < self.joint_count:
            raise ValueError(f"joint {joint} out of range or root")
        start = ROOT_DIM + 3 * (joint - 1)
        return slice(start, start + 3)

    def joint_vel_cols(self, joint: int) -> slice:
        self._need_structure()
        if not 1 <= joint < self.joint_count:
            raise ValueError(f"joint {joint} out of range or root")
        start = ROOT_DIM + 3 * (self.joint_count - 1) + 3 * (joint - 1)
        return slice(start, start + 3)


@dataclass(frozen=True)
class Skeleton:
    """Joint tree with per-part joint sets; parent of the root is itself."""

    joint_names: tuple
    parent: tuple
    bone_offsets: np.ndarray  # (K, 3) meters
    part_sets: dict = field(default_factory=dict)
    mirror_pairs: tuple = ()

    def __post_init__(self):
        K = len(self.joint_names)
        if len(self.parent) != K or self.bone_offsets.shape != (K, 3):
            raise ValueError("inconsistent skeleton arrays")
        if self.parent[0] != 0:
            raise ValueError("root joint must be its own parent")
        for j in range(1, K):
            if not 0 <= self.parent[j] < j:
                raise ValueError("parent indices must form a tree rooted at joint 0")
        non_root = set(range(1, K))
        covered = set()
        for name, joints in self.part_sets.items():
            if not joints:
                raise ValueError(f"part set {name!r} is empty")
            if covered & set(joints):
                raise ValueError("part sets must be disjoint")
            covered |= set(joints)
        if self.part_sets and covered != non_root:
            raise ValueError("part sets must jointly cover all non-root joints")

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def layout(self) -> MotionLayout:
        return MotionLayout.for_joints(self.joint_count)

    def rest_local_positions(self) -> np.ndarray:
        """Root-relative joint positions of the rest pose (identity rotations)."""
        K = self.joint_count
        pos = np.zeros((K, 3))
        for j in range(1, K):
            pos[j] = pos[self.parent[j]] + self.bone_offsets[j]
        return pos

    def mirror_of(self, joint: int) -> int:
        for a, b in self.mirror_pairs:
            if joint == a:
                return b
            if joint == b:
                return a
        return joint


_JOINTS_22 = [
    # name, parent, offset
    ("pelvis", 0, (0.0, 0.0, 0.0)),
    ("l_hip", 0, (0.10, -0.05, 0.0)),
    ("l_knee", 1, (0.0, -0.40, 0.0)),
    ("l_ankle", 2, (0.0, -0.42, 0.0)),
    ("l_foot", 3, (0.0, -0.06, 0.12)),
    ("r_hip", 0, (-0.10, -0.05, 0.0)),
    ("r_knee", 5, (0.0, -0.40, 0.0)),
    ("r_ankle", 6, (0.0, -0.42, 0.0)),
    ("r_foot", 7, (0.0, -0.06, 0.12)),
    ("spine1", 0, (0.0, 0.12, 0.0)),
    ("spine2", 9, (0.0, 0.14, 0.0)),
    ("spine3", 10, (0.0, 0.14, 0.0)),
    ("neck", 11, (0.0, 0.10, 0.0)),
    ("head", 12, (0.0, 0.12, 0.0)),
    ("l_shoulder", 11, (0.18, 0.02, 0.0)),
    ("l_elbow", 14, (0.0, -0.28, 0.0)),
    ("l_wrist", 15, (0.0, -0.26, 0.0)),
    ("l_hand", 16, (0.0, -0.08, 0.0)),
    ("r_shoulder", 11, (-0.18, 0.02, 0.0)),
    ("r_elbow", 18, (0.0, -0.28, 0.0)),
    ("r_wrist", 19, (0.0, -0.26, 0.0)),
    ("r_hand", 20, (0.0, -0.08, 0.0)),
]


def default_skeleton() -> Skeleton:
    """The 22-joint desk-scale humanoid (arms and legs hang along -y at rest)."""
    names = tuple(n for n, _, _ in _JOINTS_22)
    parents = tuple(p for _, p, _ in _JOINTS_22)
    offsets = np.array([o for _, _, o in _JOINTS_22])
    parts = {
        "upper_body": frozenset(range(9, 22)),
        "lower_body": frozenset(range(1, 9)),
    }
    pairs = ((1, 5), (2, 6), (3, 7), (4, 8), (14, 18), (15, 19), (16, 20), (17, 21))
    return Skeleton(names, parents, offsets, parts, pairs)


@dataclass(frozen=True)
class MotionSequence:
    frames: np.ndarray  # (T, D) float32
    fps: int
    layout: MotionLayout

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        object.__setattr__(self, "frames", frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise ValueError("frames must be a T x D matrix with T >= 1")
        if frames.shape[1] != self.layout.dim:
            raise ValueError(
                f"D={frames.shape[1]} does not match layout dim {self.layout.dim}"
            )
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames contain non-finite values")

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class JointTrajectory:
    positions: np.ndarray  # (T, K, 3) meters

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float32)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise ValueError("positions must be T x K x 3")
        if not np.all(np.isfinite(pos)):
            raise ValueError("positions contain non-finite values")


@dataclass(frozen=True)
class BodyPartMask:
    mask: np.ndarray  # (D,) of {0, 1}
    part_name: str

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float32)
        object.__setattr__(self, "mask", m)
        if not np.all((m == 0) | (m == 1)):
            raise ValueError("mask entries must be 0 or 1")


PART_NAMES = ("upper_body", "lower_body", "full_body")


def body_part_mask(part_name: str, layout: MotionLayout, skeleton: Skeleton | None = None) -> BodyPartMask:
    """Per-feature 0/1 mask for a body part.

    full_body selects everything; the named parts select the position and
    velocity columns of their joints and never the root or contact blocks.
    """
    if part_name not in PART_NAMES:
        raise ValueError(f"unknown body part {part_name!r}")
    mask = np.zeros(layout.dim, dtype=np.float32)
    if part_name == "full_body":
        mask[:] = 1.0
        return BodyPartMask(mask, part_name)
    skeleton = skeleton or default_skeleton()
    if skeleton.joint_count != layout.joint_count:
        raise ValueError("skeleton does not match layout")
    for j in sorted(skeleton.part_sets[part_name]):
        mask[layout.joint_pos_cols(j)] = 1.0
        mask[layout.joint_vel_cols(j)] = 1.0
    return BodyPartMask(mask, part_name)


def local_positions(x: MotionSequence) -> np.ndarray:
    """Root-relative positions of non-root joints, shape (T, K-1, 3)."""
    lay = x.layout
    return x.frames[:, lay.pos_block].reshape(x.T, lay.joint_count - 1, 3)


def velocities_from_positions(pos: np.ndarray, fps: int) -> np.ndarray:
    """Forward differences scaled to m/s; last frame repeats the previous one."""
    vel = np.zeros_like(pos)
    if pos.shape[0] > 1:
        vel[:-1] = (pos[1:] - pos[:-1]) * fps
        vel[-1] = vel[-2]
    return vel


def joints_from_motion(x: MotionSequence, skeleton: Skeleton) -> JointTrajectory:
    """Recover world-frame 3D joint positions by integrating the root features."""
    lay = x.layout
    if not lay.structured or lay.joint_count != skeleton.joint_count:
        raise ValueError("motion layout does not match skeleton")
    T, K = x.T, skeleton.joint_count
    f = x.frames.astype(np.float64)
    yaw_rate = f[:, 0]
    vxz = f[:, 1:3]
    height = f[:, 3]
    dt = 1.0 / x.fps
    yaw = np.zeros(T)
    yaw[1:] = np.cumsum(yaw_rate[:-1]) * dt
    root_xz = np.zeros((T, 2))
    cos, sin = np.cos(yaw), np.sin(yaw)
    step_x = (cos[:-1] * vxz[:-1, 0] + sin[:-1] * vxz[:-1, 1]) * dt
    step_z = (-sin[:-1] * vxz[:-1, 0] + cos[:-1] * vxz[:-1, 1]) * dt
    root_xz[1:, 0] = np.cumsum(step_x)
    root_xz[1:, 1] = np.cumsum(step_z)

    local = np.zeros((T, K, 3))
    local[:, 1:] = f[:, lay.pos_block].reshape(T, K - 1, 3)
    world = np.empty((T, K, 3))
    # rotate locals by yaw, then translate by the integrated root trajectory
    lx, lz = local[..., 0], local[..., 2]
    world[..., 0] = cos[:, None] * lx + sin[:, None] * lz + root_xz[:, None, 0]
    world[..., 2] = -sin[:, None] * lx + cos[:, None] * lz + root_xz[:, None, 1]
    world[..., 1] = local[..., 1] + height[:, None]
    return JointTrajectory(world.astype(np.float32))


# -- codec ---------------------------------------------------------------------


def write_motion(x: MotionSequence, path) -> None:
    payload = np.ascontiguousarray(x.frames, dtype="<f4").tobytes()
    header = MAGIC + struct.pack("<III", x.T, x.D, x.fps)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_motion(path, layout: MotionLayout | None = None) -> MotionSequence:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise ValueError("bad magic")
    T, D, fps = struct.unpack("<III", blob[4:16])
    expected = 16 + T * D * 4
    if len(blob) != expected:
        raise ValueError(f"truncated payload: expected {expected} bytes, got {len(blob)}")
    frames = np.frombuffer(blob[16:], dtype="<f4").reshape(T, D)
    if not np.all(np.isfinite(frames)):
        raise ValueError("non-finite values in motion file")
    if layout is None:
        layout = MotionLayout.infer(D)
    return MotionSequence(frames.copy(), fps, layout)
