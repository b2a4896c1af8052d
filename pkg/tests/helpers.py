"""Shared test fixtures: random rigid transforms and a synthetic rig."""

import numpy as np

from gaitrig.geometry import CalibrationSet, FrameId, RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via QR of a gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng, from_frame=None, to_frame=None, scale=1000.0):
    from_frame = from_frame or FrameId("sub1", "depth")
    to_frame = to_frame or FrameId("master", "color")
    return RigidTransform(
        random_rotation(rng), rng.normal(scale=scale, size=3), from_frame, to_frame
    )


def random_rig_calibration(rng) -> tuple[CalibrationSet, dict]:
    """Consistent calibration set derived from random ground-truth poses.

    Each pose (R, T) maps that frame's coordinates into a common world
    frame. Returns the calibration set plus the pose dict so tests can
    verify chains against direct pose composition.
    """
    poses = {}
    for device in ("master", "sub1", "sub2"):
        for camera in ("color", "depth"):
            poses[FrameId(device, camera)] = (
                random_rotation(rng),
                rng.normal(scale=2000.0, size=3),
            )

    def between(src: FrameId, dst: FrameId) -> RigidTransform:
        r_src, t_src = poses[src]
        r_dst, t_dst = poses[dst]
        return RigidTransform(
            r_dst.T @ r_src, r_dst.T @ (t_src - t_dst), src, dst
        )

    transforms = [
        between(FrameId("master", "depth"), FrameId("master", "color")),
        between(FrameId("sub1", "depth"), FrameId("sub1", "color")),
        between(FrameId("sub2", "depth"), FrameId("sub2", "color")),
        between(FrameId("sub1", "color"), FrameId("master", "color")),
        between(FrameId("sub2", "color"), FrameId("master", "color")),
        between(FrameId("sub1", "color"), FrameId("sub2", "color")),
    ]
    return CalibrationSet(transforms), poses
