"""Pyramid pooling head: physiologically grouped local features.

The fused spatio-temporal feature map is split along the joint axis into
five groups over three scales (whole body; upper/lower body; the two
crossed arm-leg pairs that swing together when walking). Each group is
pooled by a learned kernel spanning its full joint-by-time extent, then
projected by an independent affine map; the five projections concatenate
into the final embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Parameter, Tensor

# joint groups in 16-joint indexing, ordered: scale 1; scale 2; scale 3
GROUPS = (
    ("whole", tuple(range(16))),
    ("upper", (1, 2, 3, 4, 5, 6, 7, 8, 15)),
    ("lower", (0, 9, 10, 11, 12, 13, 14)),
    ("left_arm_right_leg", (3, 4, 5, 12, 13, 14)),
    ("right_arm_left_leg", (6, 7, 8, 9, 10, 11)),
)

GROUP_SCALE = (1, 2, 2, 3, 3)


@dataclass(frozen=True)
class PyramidSpec:
    n_joints: int = 16
    groups: tuple = GROUPS

    def __post_init__(self):
        joints = set(range(self.n_joints))
        names = [g[0] for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError("duplicate group names")
        by_scale = {}
        for (name, idx), scale in zip(self.groups, GROUP_SCALE):
            if any(j not in joints for j in idx):
                raise ValueError(f"group {name} has out-of-range joints")
            by_scale.setdefault(scale, []).append(set(idx))
        for scale in (1, 2):
            union = set().union(*by_scale[scale])
            total = sum(len(s) for s in by_scale[scale])
            if union != joints or total != self.n_joints:
                raise ValueError(f"scale {scale} groups must partition all joints")
        s3 = by_scale[3]
        if s3[0] & s3[1]:
            raise ValueError("scale 3 groups must be disjoint")
        limb = {3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14}
        if s3[0] | s3[1] != limb:
            raise ValueError("scale 3 groups must cover exactly the 12 limb joints")


def split(f_sst: Tensor, spec: PyramidSpec = PyramidSpec()) -> list[Tensor]:
    """Slice the (N, T, V, C) feature map into per-group local features."""
    if f_sst.shape[2] != spec.n_joints:
        raise ValueError(
            f"feature map has V={f_sst.shape[2]}, spec expects {spec.n_joints}"
        )
    return [engine.take(f_sst, np.asarray(idx), axis=2) for _, idx in spec.groups]


def pool(local: Tensor, kernel: Tensor) -> Tensor:
    """Pool one (N, T, J, C) local feature with a learned (J, T) kernel.

    One weighted sum over the group's full joint-by-time extent per
    channel; linear in both the input and the kernel.
    """
    local, kernel = engine.as_tensor(local), engine.as_tensor(kernel)
    n, t, j, c = local.shape
    if kernel.shape != (j, t):
        raise ValueError(f"kernel extent {kernel.shape} does not match (J={j}, T={t})")
    flat = local.data.reshape(n, t * j, c)
    kflat = kernel.data.T.reshape(t * j)  # (T, J) order matches the feature layout
    out = np.matmul(kflat.astype(local.dtype), flat)

    def backward(g):
        if local.requires_grad:
            dlocal = kflat.astype(local.dtype)[None, :, None] * g[:, None, :]
            local._accumulate(dlocal.reshape(local.shape), fresh=True)
        if kernel.requires_grad:
            dk = np.einsum("nqc,nc->q", flat, g).reshape(t, j).T
            kernel._accumulate(np.ascontiguousarray(dk), fresh=True)

    return engine._node(out, (local, kernel), backward)


class PyramidHead:
    """Learned pooling kernels plus one independent projection per group."""

    def __init__(
        self,
        channels: int,
        t_frames: int,
        embed_dim: int = 128,
        spec: PyramidSpec = PyramidSpec(),
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        rng = rng or np.random.default_rng(0)
        self.spec = spec
        self.channels = channels
        self.t_frames = t_frames
        self.embed_dim = embed_dim
        self.kernels: list[Parameter] = []
        self.weights: list[Parameter] = []
        self.biases: list[Parameter] = []
        for name, idx in spec.groups:
            j = len(idx)
            self.kernels.append(
                Parameter(f"head.{name}.pool", np.full((j, t_frames), 1.0 / (j * t_frames), dtype))
            )
            scale = np.sqrt(2.0 / channels)
            self.weights.append(
                Parameter(
                    f"head.{name}.weight",
                    rng.normal(scale=scale, size=(channels, embed_dim)).astype(dtype),
                )
            )
            self.biases.append(Parameter(f"head.{name}.bias", np.zeros(embed_dim, dtype)))

    def parameters(self) -> list[Parameter]:
        out = []
        for k, w, b in zip(self.kernels, self.weights, self.biases):
            out += [k, w, b]
        return out

    def project(self, pooled: list[Tensor]) -> tuple[Tensor, list[Tensor]]:
        """Map pooled group vectors through their projections and concatenate.

        Returns the (N, groups*embed_dim) embedding plus the per-group
        embeddings, in the fixed group order.
        """
        if len(pooled) != len(self.spec.groups):
            raise ValueError("pooled set does not match the group count")
        parts = []
        for vec, w, b in zip(pooled, self.weights, self.biases):
            if vec.shape[-1] != self.channels:
                raise ValueError("pooled vector width does not match projection")
            parts.append(engine.add(engine.matmul(vec, w), b))
        return engine.concat(parts, axis=1), parts

    def forward(self, f_sst: Tensor) -> tuple[Tensor, list[Tensor]]:
        locals_ = split(f_sst, self.spec)
        pooled = [pool(loc, k) for loc, k in zip(locals_, self.kernels)]
        return self.project(pooled)
