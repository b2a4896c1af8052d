"""Procedural walking skeletons and a virtual three-camera rig.

The generator provides ground truth for fusion verification and a
controllable dataset for end-to-end training: sinusoidal hip/knee/shoulder
angles (legs antiphase, arms antiphase to their own-side legs), rigid
segment lengths drawn per identity, and a deliberately simple occlusion
model where per-joint dropout grows with how side-on the walker is to a
camera. Condition labels map to occlusion severities, so the lightest
condition plays the role of the gallery.

The world frame coincides with the master device's color frame; the two
subordinate devices complete an isosceles triangle around the walking
area, each with a nontrivial depth-to-color offset, and the calibration
set is derived exactly from the device poses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import FusionConfig
from .fusion import (
    FusionPolicy,
    SkeletonFrame32,
    align_frame,
    fuse,
    optimized_to_frame,
    save_sequence,
)
from .geometry import (
    CalibrationSet,
    FrameId,
    RigidTransform,
    chain_to_master,
    save_calibration,
)
from .protocol import CONDITIONS, VIEWS, DatasetManifest, SequenceRecord, Subject, save_manifest
from .skeleton import JOINT16_TO_SOURCE

FPS = 30.0

# occlusion severity per walking condition, lightest (gallery) to heaviest
CONDITION_SEVERITY = {
    "LCL": 0.05,
    "BOB": 0.18,
    "SOB": 0.28,
    "LOB": 0.38,
    "MCL": 0.50,
    "HCL": 0.62,
    "MG-S": 0.70,
    "MG-D": 0.78,
    "MG-T": 0.86,
}


@dataclass(frozen=True)
class IdentityProfile:
    seed: int
    neck: float
    upper_spine: float
    lower_spine: float
    thigh: float
    shank: float
    upper_arm: float
    forearm: float
    shoulder_halfwidth: float
    hip_halfwidth: float
    shoulder_drop: float
    frequency: float  # Hz
    stride: float  # mm per gait cycle
    arm_swing: float  # rad
    hip_swing: float  # rad
    knee_swing: float  # rad
    phase: float  # rad

    def __post_init__(self):
        for name in ("neck", "upper_spine", "lower_spine", "thigh", "shank",
                     "upper_arm", "forearm", "shoulder_halfwidth", "hip_halfwidth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"profile segment {name} must be > 0")
        if not 0.5 < self.frequency < 1.5:
            raise ValueError("gait frequency must lie in (0.5, 1.5) Hz")

    @property
    def eq_height(self) -> float:
        return self.neck + self.upper_spine + self.lower_spine + self.thigh + self.shank


def gen_identity(seed: int) -> IdentityProfile:
    """Deterministic anthropometric profile with the posture-free height
    landing inside the 1520-1880 mm population range."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x1D]))
    height = rng.uniform(1545.0, 1855.0)
    ratios = np.array([0.145, 0.175, 0.115, 0.295, 0.270])
    ratios = ratios * rng.uniform(0.96, 1.04, size=5)
    ratios /= ratios.sum()
    neck, upper, lower, thigh, shank = (ratios * height).tolist()
    return IdentityProfile(
        seed=int(seed),
        neck=neck,
        upper_spine=upper,
        lower_spine=lower,
        thigh=thigh,
        shank=shank,
        upper_arm=0.62 * thigh,
        forearm=0.55 * thigh,
        shoulder_halfwidth=rng.uniform(170.0, 235.0),
        hip_halfwidth=rng.uniform(135.0, 180.0),
        shoulder_drop=rng.uniform(20.0, 40.0),
        frequency=rng.uniform(0.75, 1.25),
        stride=rng.uniform(450.0, 750.0),
        arm_swing=rng.uniform(0.30, 0.65),
        hip_swing=rng.uniform(0.35, 0.60),
        knee_swing=rng.uniform(0.45, 0.85),
        phase=rng.uniform(0.0, 2.0 * math.pi),
    )


def _pose_joints(profile: IdentityProfile, phase: float, bob: float) -> np.ndarray:
    """Skeleton in the walker's frame (x lateral, y up, z forward)."""
    p = profile
    s = np.zeros((16, 3))
    pelvis_y = p.thigh + p.shank + bob
    s[0] = (0.0, pelvis_y, 0.0)
    s[1] = s[0] + (0.0, p.lower_spine, 0.0)
    s[2] = s[1] + (0.0, p.upper_spine, 0.0)
    s[15] = s[2] + (0.0, p.neck, 0.0)

    for side, sign, leg_phase in (("l", -1.0, 0.0), ("r", 1.0, math.pi)):
        hip_idx = 9 if side == "l" else 12
        theta_h = p.hip_swing * math.sin(phase + leg_phase)
        theta_k = p.knee_swing * 0.5 * (1.0 - math.cos(phase + leg_phase))
        hip = s[0] + np.array([sign * p.hip_halfwidth, 0.0, 0.0])
        knee = hip + p.thigh * np.array([0.0, -math.cos(theta_h), math.sin(theta_h)])
        shank_angle = theta_h - theta_k
        ankle = knee + p.shank * np.array(
            [0.0, -math.cos(shank_angle), math.sin(shank_angle)]
        )
        s[hip_idx], s[hip_idx + 1], s[hip_idx + 2] = hip, knee, ankle

        # the same-side arm swings against the leg
        sh_idx = 3 if side == "l" else 6
        theta_a = p.arm_swing * math.sin(phase + leg_phase + math.pi)
        shoulder = s[2] + np.array([sign * p.shoulder_halfwidth, -p.shoulder_drop, 0.0])
        elbow = shoulder + p.upper_arm * np.array(
            [0.0, -math.cos(theta_a), math.sin(theta_a)]
        )
        wrist_angle = theta_a + 0.3
        wrist = elbow + p.forearm * np.array(
            [0.0, -math.cos(wrist_angle), math.sin(wrist_angle)]
        )
        s[sh_idx], s[sh_idx + 1], s[sh_idx + 2] = shoulder, elbow, wrist
    return s


def rest_pose(profile: IdentityProfile) -> np.ndarray:
    """Skeleton at zero gait phase; segment lengths match the profile exactly."""
    return _pose_joints(profile, 0.0, 0.0)


@dataclass(frozen=True)
class WalkSequence:
    joints: np.ndarray  # (n_frames, 16, 3) world mm
    headings: np.ndarray  # (n_frames,) rad
    fps: float


def _view_heading(view: str, frame: int, n_frames: int) -> float:
    """Walking direction per frame. Straight views keep a constant heading;
    turning views sweep 90 degrees smoothly around the middle of the clip."""
    if view not in VIEWS:
        raise ValueError(f"unknown view {view!r}")
    if not view.startswith("T"):
        return math.radians(float(view))
    corner = math.radians(float(view[1:]))
    start = corner - math.pi / 4.0
    u = (frame + 0.5) / n_frames
    blend = 0.5 * (1.0 - math.cos(math.pi * min(1.0, max(0.0, (u - 0.25) * 2.0))))
    return start + blend * (math.pi / 2.0)


AREA_CENTER = np.array([0.0, 0.0, 4000.0])


def simulate_walk(profile: IdentityProfile, view: str, n_frames: int,
                  fps: float = FPS) -> WalkSequence:
    """Rigid-limb walking ground truth in the world (master color) frame."""
    if n_frames < 12:
        raise ValueError("need at least 12 frames")
    speed = profile.stride * profile.frequency / fps  # mm per frame
    joints = np.empty((n_frames, 16, 3))
    headings = np.empty(n_frames)
    position = AREA_CENTER.copy()
    # start offset so the walk stays around the area center
    total = speed * n_frames
    position -= total / 2.0 * np.array(
        [math.sin(_view_heading(view, 0, n_frames)), 0.0,
         math.cos(_view_heading(view, 0, n_frames))]
    )
    for t in range(n_frames):
        heading = _view_heading(view, t, n_frames)
        headings[t] = heading
        phase = 2.0 * math.pi * profile.frequency * t / fps + profile.phase
        bob = 0.02 * profile.stride * math.sin(2.0 * phase)
        local = _pose_joints(profile, phase, bob)
        c, s = math.cos(heading), math.sin(heading)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
        joints[t] = local @ rot.T + position
        position = position + speed * np.array([s, 0.0, c])
    return WalkSequence(joints, headings, fps)


# -- virtual rig --------------------------------------------------------------


@dataclass(frozen=True)
class DevicePose:
    rotation: np.ndarray  # device -> world
    position: np.ndarray  # world mm

    def world_to_device(self, points: np.ndarray) -> np.ndarray:
        return (points - self.position) @ self.rotation


@dataclass(frozen=True)
class VirtualRig:
    color_poses: dict
    depth_poses: dict
    calibration: CalibrationSet


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    z = target - position
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def _small_rotation(rx: float, ry: float) -> np.ndarray:
    cx, sx = math.cos(rx), math.sin(rx)
    cy, sy = math.cos(ry), math.sin(ry)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    return mx @ my


def build_rig() -> VirtualRig:
    """Master plus two subordinates in an isosceles triangle around the
    walking area, with per-device depth-camera offsets; the calibration
    set is derived exactly from the poses."""
    color_poses = {
        "master": DevicePose(np.eye(3), np.array([0.0, 0.0, 0.0])),
        "sub1": DevicePose(
            _look_at(np.array([-3100.0, 150.0, 2400.0]), AREA_CENTER),
            np.array([-3100.0, 150.0, 2400.0]),
        ),
        "sub2": DevicePose(
            _look_at(np.array([3100.0, 150.0, 2400.0]), AREA_CENTER),
            np.array([3100.0, 150.0, 2400.0]),
        ),
    }
    offsets = {
        "master": (np.array([-32.0, -2.0, 3.8]), _small_rotation(0.010, -0.006)),
        "sub1": (np.array([-31.5, -1.6, 4.1]), _small_rotation(-0.008, 0.012)),
        "sub2": (np.array([-32.4, -2.3, 3.5]), _small_rotation(0.006, 0.009)),
    }
    depth_poses = {}
    for device, pose in color_poses.items():
        t_off, r_off = offsets[device]
        depth_poses[device] = DevicePose(
            pose.rotation @ r_off, pose.position + pose.rotation @ t_off
        )

    def between(src_pose: DevicePose, dst_pose: DevicePose, src: FrameId, dst: FrameId):
        r = dst_pose.rotation.T @ src_pose.rotation
        t = dst_pose.rotation.T @ (src_pose.position - dst_pose.position)
        return RigidTransform(r, t, src, dst)

    transforms = []
    for device in ("master", "sub1", "sub2"):
        transforms.append(
            between(depth_poses[device], color_poses[device],
                    FrameId(device, "depth"), FrameId(device, "color"))
        )
    for device in ("sub1", "sub2"):
        transforms.append(
            between(color_poses[device], color_poses["master"],
                    FrameId(device, "color"), FrameId("master", "color"))
        )
    transforms.append(
        between(color_poses["sub1"], color_poses["sub2"],
                FrameId("sub1", "color"), FrameId("sub2", "color"))
    )
    return VirtualRig(color_poses, depth_poses, CalibrationSet(transforms))


@dataclass(frozen=True)
class OcclusionModel:
    severity: float  # 0 = none, ~1 = heavy
    base_dropout: float = 0.15
    yaw_dropout: float = 0.85
    confidence_loss: float = 0.6
    noise_gain: float = 2.0  # surviving joints get noisier as occlusion grows

    def dropout_probability(self, rel_yaw: float) -> float:
        s = math.sin(rel_yaw) ** 2
        return min(0.97, self.severity * (self.base_dropout + self.yaw_dropout * s))

    def confidence(self, rel_yaw: float, jitter: float) -> float:
        s = math.sin(rel_yaw) ** 2
        value = 0.95 * (1.0 - self.confidence_loss * self.severity * s)
        value -= 0.15 * self.severity * jitter
        return float(min(1.0, max(0.02, value)))

    def noise_scale(self) -> float:
        return 1.0 + self.noise_gain * self.severity


def observe(
    rig: VirtualRig,
    walk: WalkSequence,
    noise_mm: float,
    occlusion: OcclusionModel,
    rng: np.random.Generator,
) -> dict[str, list[SkeletonFrame32]]:
    """Per-device observations in each device's depth frame.

    The random stream is consumed in a fixed order independent of the
    noise scale and severity, so regenerating with a different severity
    keeps the dropout sets nested and the noise draws identical.
    """
    out: dict[str, list[SkeletonFrame32]] = {d: [] for d in rig.depth_poses}
    sigma = noise_mm * occlusion.noise_scale()
    for t in range(walk.joints.shape[0]):
        pelvis = walk.joints[t, 0]
        for device in sorted(rig.depth_poses):
            pose = rig.depth_poses[device]
            to_subject = pelvis - rig.color_poses[device].position
            bearing = math.atan2(to_subject[0], to_subject[2])
            rel_yaw = walk.headings[t] - bearing
            frame = SkeletonFrame32(t, device)
            local = pose.world_to_device(walk.joints[t])
            for j16, src in enumerate(JOINT16_TO_SOURCE):
                u_drop = rng.random()
                jitter = rng.random()
                noise = rng.normal(size=3)
                if u_drop < occlusion.dropout_probability(rel_yaw):
                    continue
                conf = occlusion.confidence(rel_yaw, jitter)
                frame.set_joint(src, local[j16] + sigma * noise, conf)
            out[device].append(frame)
    return out


def fuse_observations(
    rig_or_calib,
    observations: dict[str, list[SkeletonFrame32]],
    policy: FusionPolicy = FusionPolicy(),
    chain_mode: str = "strict",
) -> list[SkeletonFrame32]:
    """Align each device's frames into the master color frame and fuse.

    Returns fused frames in the shared 32-slot form (device tag 'OJ').
    """
    calib = rig_or_calib.calibration if isinstance(rig_or_calib, VirtualRig) else rig_or_calib
    chains = {d: chain_to_master(calib, d, chain_mode) for d in observations}
    n = min(len(frames) for frames in observations.values())
    fused = []
    for t in range(n):
        aligned = [align_frame(observations[d][t], chains[d]) for d in sorted(observations)]
        fused.append(optimized_to_frame(fuse(aligned, policy)))
    return fused


# -- dataset construction ------------------------------------------------------


def build_synthetic_manifest(
    out_dir: str | Path,
    n_ids: int = 8,
    conditions: tuple = ("LCL",),
    views: tuple = ("0", "90", "180", "270"),
    reps: int = 3,
    seed: int = 0,
    frame_range: tuple = (30, 70),
    noise_mm: float = 6.0,
    fusion_cfg: FusionConfig = FusionConfig(),
    chain_mode: str = "strict",
) -> DatasetManifest:
    """Generate fused sequence files plus a manifest (and the rig's
    calibration file) under `out_dir`; byte-identical for a fixed seed."""
    out_dir = Path(out_dir)
    seq_dir = out_dir / "sequences"
    seq_dir.mkdir(parents=True, exist_ok=True)
    for cond in conditions:
        if cond not in CONDITIONS:
            raise ValueError(f"unknown condition {cond!r}")
    rig = build_rig()
    save_calibration(rig.calibration, out_dir / "calibration.json")
    policy = FusionPolicy(fusion_cfg.strategy, fusion_cfg.outlier_threshold,
                          fusion_cfg.min_confidence)

    subjects = [Subject(f"S{i:03d}", "F" if i % 2 == 0 else "M") for i in range(n_ids)]
    records = []
    for i, subject in enumerate(subjects):
        profile = gen_identity(int(np.random.SeedSequence([seed, 0x1D5, i]).generate_state(1)[0]))
        for vi, view in enumerate(views):
            for rep in range(reps):
                base = np.random.SeedSequence([seed, 0x5E9, i, vi, rep])
                n_frames = int(
                    np.random.default_rng(base.spawn(1)[0]).integers(frame_range[0],
                                                                     frame_range[1] + 1)
                )
                walk = simulate_walk(profile, view, n_frames)
                for cond in conditions:
                    # one fresh generator per condition, seeded identically:
                    # severity only thresholds the shared dropout draws
                    obs_rng = np.random.default_rng(np.random.SeedSequence(
                        [seed, 0x0B5, i, vi, rep]))
                    occ = OcclusionModel(CONDITION_SEVERITY[cond])
                    obs = observe(rig, walk, noise_mm, occ, obs_rng)
                    fused = fuse_observations(rig, obs, policy, chain_mode)
                    name = f"{subject.id}_{cond}_{view}_{rep}.jsonl"
                    save_sequence(fused, seq_dir / name,
                                  provenance={"seed": seed, "sequence": name})
                    records.append(
                        SequenceRecord(subject.id, cond, view, n_frames,
                                       f"sequences/{name}")
                    )
    manifest = DatasetManifest(subjects, records, source="synthetic")
    save_manifest(manifest, out_dir / "manifest.json", provenance={"seed": seed})
    return manifest
