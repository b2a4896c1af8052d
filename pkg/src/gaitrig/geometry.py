"""Rigid-transform algebra and the multi-device calibration chain.

All points and translations are 64-bit, in millimeters. Rotations are 3x3
row-major matrices validated against orthonormality and det=+1 at 1e-9.
A rig has exactly six frames: {master, sub1, sub2} x {color, depth}. The
chain operation aligns data observed in any device's depth frame into the
master device's color frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEVICES = ("master", "sub1", "sub2")
CAMERAS = ("color", "depth")

ROTATION_TOL = 1e-9


class CalibrationError(ValueError):
    """Raised when a matrix fails the rotation checks or a file is malformed."""


class ChainError(ValueError):
    """Raised on frame mismatches or missing calibration pairs."""


@dataclass(frozen=True, order=True)
class FrameId:
    """One of the six camera coordinate frames of a rig."""

    device: str
    camera: str

    def __post_init__(self):
        if self.device not in DEVICES:
            raise ChainError(f"unknown device {self.device!r}, expected one of {DEVICES}")
        if self.camera not in CAMERAS:
            raise ChainError(f"unknown camera {self.camera!r}, expected one of {CAMERAS}")

    def __str__(self):
        return f"{self.device}:{self.camera}"

    @classmethod
    def parse(cls, text: str) -> "FrameId":
        device, sep, camera = text.partition(":")
        if not sep:
            raise ChainError(f"frame id {text!r} is not of the form 'device:camera'")
        return cls(device, camera)


MASTER_COLOR = FrameId("master", "color")


def all_frames() -> list[FrameId]:
    return [FrameId(d, c) for d in DEVICES for c in CAMERAS]


@dataclass(frozen=True)
class RotationCheck:
    ok: bool
    orthogonality_error: float
    det_error: float

    @property
    def message(self) -> str:
        parts = []
        if self.orthogonality_error > ROTATION_TOL:
            parts.append(f"|R^T R - I| = {self.orthogonality_error:.3e}")
        if self.det_error > ROTATION_TOL:
            parts.append(f"|det(R) - 1| = {self.det_error:.3e}")
        return "rotation ok" if self.ok else "not a rotation: " + ", ".join(parts)


def validate_rotation(m: np.ndarray) -> RotationCheck:
    """Check orthonormality (R^T R = I) and det = +1, both at 1e-9."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        return RotationCheck(False, np.inf, np.inf)
    ortho = float(np.abs(m.T @ m - np.eye(3)).max())
    det = float(abs(np.linalg.det(m) - 1.0))
    return RotationCheck(ortho <= ROTATION_TOL and det <= ROTATION_TOL, ortho, det)


@dataclass(frozen=True)
class RigidTransform:
    """Maps points from `from_frame` to `to_frame` as p -> R p + T.

    The rotation is validated on construction; apply/invert/compose trust it.
    """

    rotation: np.ndarray
    translation: np.ndarray
    from_frame: FrameId
    to_frame: FrameId

    def __post_init__(self):
        r = np.ascontiguousarray(self.rotation, dtype=np.float64)
        t = np.ascontiguousarray(self.translation, dtype=np.float64)
        if t.shape != (3,):
            raise CalibrationError(f"translation must have shape (3,), got {t.shape}")
        check = validate_rotation(r)
        if not check.ok:
            raise CalibrationError(
                f"{self.from_frame} -> {self.to_frame}: {check.message}"
            )
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls, from_frame: FrameId, to_frame: FrameId) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), from_frame, to_frame)


def apply(t: RigidTransform, p: np.ndarray) -> np.ndarray:
    """Transform one point or an (n, 3) batch of points."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise ValueError("point contains non-finite components")
    return p @ t.rotation.T + t.translation


def invert(t: RigidTransform) -> RigidTransform:
    """Inverse transform (R^T, -R^T T) with the frames swapped."""
    rt = t.rotation.T.copy()
    return RigidTransform(rt, -(rt @ t.translation), t.to_frame, t.from_frame)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying b first, then a."""
    if b.to_frame != a.from_frame:
        raise ChainError(
            f"cannot compose: {b.from_frame}->{b.to_frame} then {a.from_frame}->{a.to_frame}"
        )
    return RigidTransform(
        a.rotation @ b.rotation,
        a.rotation @ b.translation + a.translation,
        b.from_frame,
        a.to_frame,
    )


class CalibrationSet:
    """The stereo calibrations of a rig, keyed by (from_frame, to_frame).

    Holds per-device color<->depth transforms and pairwise color<->color
    transforms. Any chain query walks the transform graph, inverting edges
    as needed, so a path must exist from every frame to master:color.
    """

    def __init__(self, transforms: list[RigidTransform]):
        self._edges: dict[tuple[FrameId, FrameId], RigidTransform] = {}
        for t in transforms:
            if t.from_frame == t.to_frame:
                raise CalibrationError(f"degenerate calibration {t.from_frame} -> itself")
            key = (t.from_frame, t.to_frame)
            if key in self._edges or (key[1], key[0]) in self._edges:
                raise CalibrationError(f"duplicate calibration for {key[0]} -> {key[1]}")
            self._edges[key] = t

    def __len__(self):
        return len(self._edges)

    def transforms(self) -> list[RigidTransform]:
        return list(self._edges.values())

    def get(self, from_frame: FrameId, to_frame: FrameId) -> RigidTransform:
        """Direct or directly-inverted calibration between two frames."""
        t = self._edges.get((from_frame, to_frame))
        if t is not None:
            return t
        t = self._edges.get((to_frame, from_frame))
        if t is not None:
            return invert(t)
        raise ChainError(f"no calibration between {from_frame} and {to_frame}")

    def find(self, from_frame: FrameId, to_frame: FrameId) -> RigidTransform:
        """Shortest composed transform between two frames (BFS over edges)."""
        if from_frame == to_frame:
            return RigidTransform.identity(from_frame, to_frame)
        neighbors: dict[FrameId, list[FrameId]] = {}
        for a, b in self._edges:
            neighbors.setdefault(a, []).append(b)
            neighbors.setdefault(b, []).append(a)
        prev: dict[FrameId, FrameId] = {from_frame: from_frame}
        queue = [from_frame]
        while queue:
            node = queue.pop(0)
            if node == to_frame:
                break
            for nxt in sorted(neighbors.get(node, [])):
                if nxt not in prev:
                    prev[nxt] = node
                    queue.append(nxt)
        if to_frame not in prev:
            raise ChainError(f"no calibration path from {from_frame} to {to_frame}")
        hops = [to_frame]
        while hops[-1] != from_frame:
            hops.append(prev[hops[-1]])
        hops.reverse()
        chain = RigidTransform.identity(from_frame, from_frame)
        for a, b in zip(hops[:-1], hops[1:]):
            chain = compose(self.get(a, b), chain)
        return chain


def chain_to_master(
    calib: CalibrationSet, device: str, mode: str = "strict"
) -> RigidTransform:
    """Transform from `device`'s depth frame to the master color frame.

    `strict` composes the device's depth->color calibration with the
    color->color pair toward the master device. `paper` additionally adds
    the master device's R_M T_M offset to the translation, reproducing the
    published alignment chain verbatim; the two modes differ exactly by
    that offset.
    """
    if mode not in ("paper", "strict"):
        raise ChainError(f"unknown chain mode {mode!r}")
    if device not in DEVICES:
        raise ChainError(f"unknown device {device!r}")
    strict = calib.find(FrameId(device, "depth"), MASTER_COLOR)
    if mode == "strict":
        return strict
    master = calib.get(FrameId("master", "depth"), MASTER_COLOR)
    offset = master.rotation @ master.translation
    return RigidTransform(
        strict.rotation, strict.translation + offset, strict.from_frame, strict.to_frame
    )


# -- calibration file -------------------------------------------------------

_TRANSFORM_KEYS = {"from", "to", "R", "T"}


def save_calibration(calib: CalibrationSet, path: str | Path) -> None:
    """Write a calibration file (JSON, >= 15 significant digits per number)."""
    records = []
    for t in calib.transforms():
        records.append(
            {
                "from": str(t.from_frame),
                "to": str(t.to_frame),
                "R": [float(v) for v in t.rotation.ravel()],
                "T": [float(v) for v in t.translation],
            }
        )
    doc = {"format": "gaitrig-calibration", "version": 1, "transforms": records}
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")


def load_calibration(path: str | Path) -> CalibrationSet:
    """Parse and validate a calibration file; fails fast on any bad entry."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CalibrationError(f"{path}: invalid calibration file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != "gaitrig-calibration":
        raise CalibrationError(f"{path}: not a gaitrig calibration file")
    transforms = []
    for i, rec in enumerate(doc.get("transforms", [])):
        extra = set(rec) - _TRANSFORM_KEYS
        if extra:
            raise CalibrationError(f"{path}: transform {i} has unknown keys {sorted(extra)}")
        if set(rec) != _TRANSFORM_KEYS:
            raise CalibrationError(f"{path}: transform {i} is missing required keys")
        r = np.asarray(rec["R"], dtype=np.float64)
        if r.shape != (9,):
            raise CalibrationError(f"{path}: transform {i}: R must hold 9 numbers")
        transforms.append(
            RigidTransform(
                r.reshape(3, 3),
                np.asarray(rec["T"], dtype=np.float64),
                FrameId.parse(rec["from"]),
                FrameId.parse(rec["to"]),
            )
        )
    return CalibrationSet(transforms)
