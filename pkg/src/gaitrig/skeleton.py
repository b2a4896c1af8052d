"""The dual skeleton model: 16 selected joints plus an anthropometric
pseudo skeleton.

The 16 joints keep the gait-relevant body structure and drop face, hand
and foot joints. Bones point from the body center outward (parent minus
child). The pseudo skeleton mirrors the real one node for node: every
non-root node carries the vector of the bone ending at it, and the root
carries the fake bone (height, shoulder breadth, shoulder-to-hip ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import N_JOINTS, OptimizedFrame, SkeletonFrame32

N_SELECTED = 16

# 16-joint index -> source joint index of the 32-joint tracker skeleton.
JOINT16_TO_SOURCE = (0, 1, 3, 5, 6, 7, 12, 13, 14, 18, 19, 20, 22, 23, 24, 26)

JOINT16_NAMES = (
    "pelvis", "navel", "neck",
    "l_shoulder", "l_elbow", "l_wrist",
    "r_shoulder", "r_elbow", "r_wrist",
    "l_hip", "l_knee", "l_ankle",
    "r_hip", "r_knee", "r_ankle",
    "head",
)

PELVIS, NAVEL, NECK = 0, 1, 2
L_SHOULDER, L_ELBOW, L_WRIST = 3, 4, 5
R_SHOULDER, R_ELBOW, R_WRIST = 6, 7, 8
L_HIP, L_KNEE, L_ANKLE = 9, 10, 11
R_HIP, R_KNEE, R_ANKLE = 12, 13, 14
HEAD = 15

# child joint -> parent joint; 15 bones rooted at the pelvis.
BONE_PARENT = {
    NAVEL: PELVIS,
    NECK: NAVEL,
    HEAD: NECK,
    L_SHOULDER: NECK,
    L_ELBOW: L_SHOULDER,
    L_WRIST: L_ELBOW,
    R_SHOULDER: NECK,
    R_ELBOW: R_SHOULDER,
    R_WRIST: R_ELBOW,
    L_HIP: PELVIS,
    L_KNEE: L_HIP,
    L_ANKLE: L_KNEE,
    R_HIP: PELVIS,
    R_KNEE: R_HIP,
    R_ANKLE: R_KNEE,
}

BONE_EDGES = tuple(sorted((parent, child) for child, parent in BONE_PARENT.items()))


class IncompleteSkeletonError(ValueError):
    """A selected joint is missing from the source frame."""


class DegenerateSkeletonError(ValueError):
    """Skeleton geometry does not support the requested feature (e.g. zero hip width)."""


@dataclass(frozen=True)
class AnthropometricFeatures:
    height: float  # mm
    shoulder_breadth: float  # mm
    shoulder_hip_ratio: float


@dataclass(frozen=True)
class DualSkeleton:
    """Real 16-joint skeleton and its structurally identical pseudo twin."""

    real: np.ndarray  # (16, 3) mm
    pseudo: np.ndarray  # (16, 3); bone vectors, root = (H, SB, SHR)


def select_joints(frame: SkeletonFrame32 | OptimizedFrame) -> np.ndarray:
    """Extract the 16 selected joints as a (16, 3) array in source order."""
    if isinstance(frame, OptimizedFrame):
        slots = frame.positions
    else:
        slots = [obs.position if obs is not None else None for obs in frame.joints]
    if len(slots) != N_JOINTS:
        raise IncompleteSkeletonError(f"expected {N_JOINTS} joint slots")
    out = np.empty((N_SELECTED, 3), dtype=np.float64)
    for i, src in enumerate(JOINT16_TO_SOURCE):
        if slots[src] is None:
            raise IncompleteSkeletonError(
                f"joint {JOINT16_NAMES[i]} (source index {src}) is missing"
            )
        out[i] = slots[src]
    return out


def _check16(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (N_SELECTED, 3):
        raise IncompleteSkeletonError(f"skeleton must have shape (16, 3), got {s.shape}")
    if not np.all(np.isfinite(s)):
        raise IncompleteSkeletonError("skeleton has non-finite joints")
    return s


def compute_bones(s: np.ndarray) -> np.ndarray:
    """(16, 3) bone vectors keyed by child joint: parent - child; row 0 is zero."""
    s = _check16(s)
    bones = np.zeros_like(s)
    for child, parent in BONE_PARENT.items():
        bones[child] = s[parent] - s[child]
    return bones


def compute_height(s: np.ndarray) -> float:
    """Posture-free height: neck + spine segments plus the mean leg length.

    Sum of the neck, upper-spine and lower-spine bone lengths plus the
    average of the left and right thigh-plus-shank lengths.
    """
    s = _check16(s)

    def blen(parent, child):
        return float(np.linalg.norm(s[parent] - s[child]))

    legs = (
        blen(R_HIP, R_KNEE) + blen(R_KNEE, R_ANKLE)
        + blen(L_HIP, L_KNEE) + blen(L_KNEE, L_ANKLE)
    )
    return blen(NECK, HEAD) + blen(NAVEL, NECK) + blen(PELVIS, NAVEL) + legs / 2.0


def compute_sb_shr(s: np.ndarray) -> tuple[float, float]:
    """Shoulder breadth and shoulder-to-hip-width ratio."""
    s = _check16(s)
    sb = float(np.linalg.norm(s[R_SHOULDER] - s[L_SHOULDER]))
    hip_width = float(np.linalg.norm(s[R_HIP] - s[L_HIP]))
    if hip_width == 0.0:
        raise DegenerateSkeletonError("zero hip width; SHR is undefined")
    return sb, sb / hip_width


def build_dual_skeleton(s: np.ndarray) -> DualSkeleton:
    """Attach the pseudo skeleton: bone vectors per child, fake bone at the root."""
    s = _check16(s)
    pseudo = compute_bones(s)
    sb, shr = compute_sb_shr(s)
    pseudo[PELVIS] = (compute_height(s), sb, shr)
    return DualSkeleton(real=s, pseudo=pseudo)
