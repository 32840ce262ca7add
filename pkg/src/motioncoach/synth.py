"""Closed-form synthetic motion primitives for the desk-scale corpus."""

from __future__ import annotations

import numpy as np

from .motion import (
    DEFAULT_ROOT_HEIGHT,
    MotionSequence,
    Skeleton,
    default_skeleton,
)
from .nn.rng import substream

MIN_FRAMES = 8

# chains rotated/offset by each primitive (22-joint skeleton indices)
LEFT_ARM = (15, 16, 17)
RIGHT_ARM = (19, 20, 21)
LEFT_LEG = (2, 3, 4)
RIGHT_LEG = (6, 7, 8)

# params: name -> (default, low, high)
PRIMITIVES = {
    "arm_raise": {"amplitude": (0.8, 0.0, 1.5), "side": (0.0, 0.0, 1.0)},
    "squat": {"depth": (0.25, 0.0, 0.4)},
    "wave": {"amplitude": (0.2, 0.0, 0.5), "cycles": (2.0, 0.5, 6.0), "side": (0.0, 0.0, 1.0)},
    "kick": {"amplitude": (0.9, 0.0, 1.3), "side": (1.0, 0.0, 1.0)},
    "walk_cycle": {"period": (30.0, 8.0, 120.0), "stride": (0.5, 0.1, 0.8)},
    "reach": {"distance": (0.3, 0.0, 0.4), "side": (0.0, 0.0, 1.0)},
}


def rot_x(points: np.ndarray, angle) -> np.ndarray:
    """Rotate (..., 3) points about the x axis; angle may broadcast."""
    c, s = np.cos(angle), np.sin(angle)
    out = points.copy()
    out[..., 1] = c * points[..., 1] - s * points[..., 2]
    out[..., 2] = s * points[..., 1] + c * points[..., 2]
    return out


def rotate_chain(local: np.ndarray, joints, pivot: int, angles: np.ndarray) -> None:
    """Rotate `joints` about the per-frame position of `pivot`, in place.

    local is (T, K, 3) root-relative positions including the root row.
    """
    piv = local[:, pivot : pivot + 1, :]
    idx = list(joints)
    local[:, idx, :] = piv + rot_x(local[:, idx, :] - piv, np.asarray(angles)[:, None])


def _resolve_params(primitive: str, params: dict) -> dict:
    table = PRIMITIVES[primitive]
    unknown = set(params) - set(table)
    if unknown:
        raise ValueError(f"unknown params for {primitive}: {sorted(unknown)}")
    out = {}
    for name, (default, low, high) in table.items():
        v = float(params.get(name, default))
        if not low <= v <= high:
            raise ValueError(f"{primitive}.{name}={v} out of bounds [{low}, {high}]")
        out[name] = v
    return out


def synth_motion(
    primitive: str,
    params: dict | None,
    T: int,
    skeleton: Skeleton | None = None,
    seed: int = 0,
    fps: int = 20,
) -> MotionSequence:
    """Deterministic synthetic clip; see PRIMITIVES for parameter bounds."""
    if primitive not in PRIMITIVES:
        raise ValueError(f"unknown primitive {primitive!r}")
    if T < MIN_FRAMES:
        raise ValueError(f"T={T} too short; need at least {MIN_FRAMES} frames")
    skeleton = skeleton or default_skeleton()
    p = _resolve_params(primitive, params or {})
    rng = substream(seed, f"synth/{primitive}")
    phase0 = rng.uniform(0.0, 2.0 * np.pi)

    K = skeleton.joint_count
    lay = skeleton.layout()
    rest = skeleton.rest_local_positions()
    # positions are generated for T+1 frames so velocity features are clean
    # forward differences at every emitted frame, preserving periodicity
    Tx = T + 1
    local = np.broadcast_to(rest, (Tx, K, 3)).copy()
    t = np.arange(Tx, dtype=np.float64)
    ramp = np.sin(np.pi * t / (T - 1))  # 0 -> 1 -> 0 over the emitted frames
    root = np.zeros((T, 4))
    root[:, 3] = DEFAULT_ROOT_HEIGHT
    contacts = np.ones((T, 4))

    if primitive == "arm_raise":
        chain = RIGHT_ARM if p["side"] >= 0.5 else LEFT_ARM
        rotate_chain(local, chain, chain[0] - 1, p["amplitude"] * ramp)
    elif primitive == "squat":
        h = DEFAULT_ROOT_HEIGHT - p["depth"] * ramp**2
        root[:, 3] = h[:T]
        legs = list(range(1, 9))
        local[:, legs, 1] *= (h / DEFAULT_ROOT_HEIGHT)[:, None]
    elif primitive == "wave":
        chain = RIGHT_ARM if p["side"] >= 0.5 else LEFT_ARM
        rotate_chain(local, chain, chain[0] - 1, np.full(Tx, np.pi / 2))
        osc = p["amplitude"] * np.sin(2 * np.pi * p["cycles"] * t / (T - 1) + phase0)
        local[:, [chain[1], chain[2]], 0] += osc[:, None]
    elif primitive == "kick":
        chain = RIGHT_LEG if p["side"] >= 0.5 else LEFT_LEG
        angles = p["amplitude"] * ramp**2
        rotate_chain(local, chain, chain[0] - 1, angles)
        foot = slice(2, 4) if p["side"] >= 0.5 else slice(0, 2)
        contacts[:, foot] = (angles[:T] < 0.1).astype(float)[:, None]
    elif primitive == "walk_cycle":
        period, stride = p["period"], p["stride"]
        phase = 2 * np.pi * t / period + phase0
        swing = 0.5 * stride
        rotate_chain(local, LEFT_LEG, 1, swing * np.sin(phase))
        rotate_chain(local, RIGHT_LEG, 5, swing * np.sin(phase + np.pi))
        rotate_chain(local, LEFT_ARM, 14, -0.4 * swing * np.sin(phase))
        rotate_chain(local, RIGHT_ARM, 18, -0.4 * swing * np.sin(phase + np.pi))
        root[:, 2] = stride * fps / period  # forward velocity, m/s
        root[:, 3] = DEFAULT_ROOT_HEIGHT + 0.02 * np.sin(2 * phase[:T])
        contacts[:, 0:2] = (np.sin(phase[:T]) < 0)[:, None]
        contacts[:, 2:4] = (np.sin(phase[:T] + np.pi) < 0)[:, None]
    elif primitive == "reach":
        chain = RIGHT_ARM if p["side"] >= 0.5 else LEFT_ARM
        u = np.clip(t / (T - 1), 0.0, 1.0)
        s = 3 * u**2 - 2 * u**3
        rotate_chain(local, chain, chain[0] - 1, (np.pi / 2) * s)
        local[:, [chain[1], chain[2]], 2] += (p["distance"] * s)[:, None]

    pos_all = local[:, 1:]  # non-root joints, T+1 frames
    pos = pos_all[:T]
    vel = (pos_all[1:] - pos_all[:-1]) * fps
    frames = np.concatenate(
        [root, pos.reshape(T, -1), vel.reshape(T, -1), contacts], axis=1
    )
    return MotionSequence(frames.astype(np.float32), fps, lay)
