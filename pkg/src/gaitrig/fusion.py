"""Alignment and fusion of per-device 32-joint skeleton observations.

Observations from each device are aligned into the target (master color)
frame, then combined per joint into optimized joints (OJ). The fusion rule:
drop observations with confidence below the policy minimum, reject at most
one outlier (the lowest-confidence observation lying farther than the
threshold from the confidence-weighted centroid of the others), then
combine the survivors. The weighted mean is accumulated relative to the
first surviving contributor (in device-id order) so that a lone
contributor, or identical contributors, pass through bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, apply

N_JOINTS = 32


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class JointObservation:
    device: str
    frame_index: int
    joint_id: int
    position: np.ndarray  # (3,) mm
    confidence: float

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise FusionError(f"joint {self.joint_id}: bad position {self.position!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise FusionError(f"joint {self.joint_id}: confidence {self.confidence} not in [0,1]")
        if not 0 <= self.joint_id < N_JOINTS:
            raise FusionError(f"joint id {self.joint_id} out of range")
        object.__setattr__(self, "position", p)


@dataclass
class SkeletonFrame32:
    """One frame of one device: 32 optional joint observations."""

    frame_index: int
    device: str
    joints: list[JointObservation | None] = field(
        default_factory=lambda: [None] * N_JOINTS
    )

    def __post_init__(self):
        if len(self.joints) != N_JOINTS:
            raise FusionError(f"expected {N_JOINTS} joint slots, got {len(self.joints)}")
        for obs in self.joints:
            if obs is not None and obs.frame_index != self.frame_index:
                raise FusionError(
                    f"joint {obs.joint_id} frame {obs.frame_index} != frame {self.frame_index}"
                )

    def set_joint(self, joint_id: int, position, confidence: float):
        self.joints[joint_id] = JointObservation(
            self.device, self.frame_index, joint_id, position, confidence
        )


@dataclass(frozen=True)
class FusionPolicy:
    strategy: str = "confidence_weighted_mean"
    outlier_threshold: float = 150.0  # mm
    min_confidence: float = 0.1

    def __post_init__(self):
        if self.strategy not in ("confidence_weighted_mean", "median_per_axis"):
            raise FusionError(f"unknown fusion strategy {self.strategy!r}")
        if self.outlier_threshold <= 0:
            raise FusionError("outlier_threshold must be > 0")


@dataclass
class OptimizedFrame:
    """Fused joints in the target frame, with confidence and source masks."""

    frame_index: int
    positions: list[np.ndarray | None]
    confidences: list[float]
    sources: list[tuple[str, ...]]

    def present(self, joint_id: int) -> bool:
        return self.positions[joint_id] is not None


def align_frame(frame: SkeletonFrame32, t: RigidTransform) -> SkeletonFrame32:
    """Apply a chain transform to every present joint; confidences unchanged."""
    out = SkeletonFrame32(frame.frame_index, frame.device)
    for obs in frame.joints:
        if obs is None:
            continue
        out.joints[obs.joint_id] = JointObservation(
            obs.device, obs.frame_index, obs.joint_id, apply(t, obs.position), obs.confidence
        )
    return out


def occlusion_flags(frame: SkeletonFrame32, min_confidence: float) -> list[bool]:
    """True where a joint is missing or its confidence is strictly below the minimum."""
    return [obs is None or obs.confidence < min_confidence for obs in frame.joints]


def _weighted_centroid(obs: list[JointObservation]) -> np.ndarray:
    w = np.array([o.confidence for o in obs])
    pts = np.stack([o.position for o in obs])
    total = w.sum()
    if total <= 0.0:
        return pts.mean(axis=0)
    return (pts * w[:, None]).sum(axis=0) / total


def _reject_one_outlier(
    obs: list[JointObservation], threshold: float
) -> list[JointObservation]:
    if len(obs) < 2:
        return obs
    outliers = []
    for i, o in enumerate(obs):
        centroid = _weighted_centroid(obs[:i] + obs[i + 1 :])
        if np.linalg.norm(o.position - centroid) > threshold:
            outliers.append(o)
    if not outliers:
        return obs
    worst = min(outliers, key=lambda o: (o.confidence, o.device))
    return [o for o in obs if o is not worst]


def _combine(obs: list[JointObservation], strategy: str) -> np.ndarray:
    if len(obs) == 1:
        return obs[0].position.copy()
    pts = np.stack([o.position for o in obs])
    if strategy == "median_per_axis":
        return np.median(pts, axis=0)
    w = np.array([o.confidence for o in obs])
    total = w.sum()
    base = pts[0]
    if total <= 0.0:
        return base + (pts - base).sum(axis=0) / len(obs)
    return base + ((pts - base) * w[:, None]).sum(axis=0) / total


def fuse(frames: list[SkeletonFrame32], policy: FusionPolicy) -> OptimizedFrame:
    """Fuse aligned per-device frames into one optimized frame.

    Contributors are processed in sorted device order, so the result is
    invariant to the order of the input list.
    """
    if not frames:
        raise FusionError("cannot fuse an empty frame list")
    index = frames[0].frame_index
    if any(f.frame_index != index for f in frames):
        raise FusionError("frames to fuse must share a frame index")
    if len({f.device for f in frames}) != len(frames):
        raise FusionError("duplicate device in fusion input")
    ordered = sorted(frames, key=lambda f: f.device)

    positions: list[np.ndarray | None] = [None] * N_JOINTS
    confidences = [0.0] * N_JOINTS
    sources: list[tuple[str, ...]] = [()] * N_JOINTS
    for j in range(N_JOINTS):
        obs = [
            f.joints[j]
            for f in ordered
            if f.joints[j] is not None and f.joints[j].confidence >= policy.min_confidence
        ]
        if not obs:
            continue
        obs = _reject_one_outlier(obs, policy.outlier_threshold)
        positions[j] = _combine(obs, policy.strategy)
        confidences[j] = max(o.confidence for o in obs)
        sources[j] = tuple(o.device for o in obs)
    return OptimizedFrame(index, positions, confidences, sources)


# -- sequence file (line-delimited records) ---------------------------------

SEQUENCE_FORMAT = "gaitrig-skeleton-sequence"
SEQUENCE_VERSION = 1


def frame_to_record(frame: SkeletonFrame32) -> dict:
    joints, conf = [], []
    for obs in frame.joints:
        if obs is None:
            joints.append(None)
            conf.append(0.0)
        else:
            joints.append([float(v) for v in obs.position])
            conf.append(float(obs.confidence))
    return {"t": frame.frame_index, "device": frame.device, "joints": joints, "conf": conf}


def optimized_to_frame(opt: OptimizedFrame) -> SkeletonFrame32:
    """Re-express a fused frame in the shared 32-slot form (device 'OJ')."""
    frame = SkeletonFrame32(opt.frame_index, "OJ")
    for j in range(N_JOINTS):
        if opt.positions[j] is not None:
            frame.set_joint(j, opt.positions[j], opt.confidences[j])
    return frame


def record_to_frame(rec: dict) -> SkeletonFrame32:
    required = {"t", "device", "joints", "conf"}
    if set(rec) - required:
        raise FusionError(f"sequence record has unknown keys {sorted(set(rec) - required)}")
    if set(rec) != required:
        raise FusionError("sequence record is missing required keys")
    frame = SkeletonFrame32(int(rec["t"]), str(rec["device"]))
    joints, conf = rec["joints"], rec["conf"]
    if len(joints) != N_JOINTS or len(conf) != N_JOINTS:
        raise FusionError("sequence record must carry 32 joints and 32 confidences")
    for j, (pos, c) in enumerate(zip(joints, conf)):
        if pos is not None:
            frame.set_joint(j, np.asarray(pos, dtype=np.float64), float(c))
    return frame


def save_sequence(frames: list[SkeletonFrame32], path: str | Path, provenance: dict | None = None):
    header = {"format": SEQUENCE_FORMAT, "version": SEQUENCE_VERSION}
    header.update(provenance or {})
    lines = [json.dumps(header)]
    lines += [json.dumps(frame_to_record(f)) for f in frames]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_sequence(path: str | Path) -> list[SkeletonFrame32]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FusionError(f"{path}: empty sequence file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FusionError(f"{path}: bad header line: {exc}") from exc
    if header.get("format") != SEQUENCE_FORMAT:
        raise FusionError(f"{path}: not a gaitrig skeleton sequence file")
    return [record_to_frame(json.loads(line)) for line in lines[1:] if line]
