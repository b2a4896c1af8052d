"""Siamese spatio-temporal graph network over the dual skeleton streams.

Both streams run through one shared stack of blocks (spatial graph
convolution, then temporal convolution, with batch normalization and a
residual path), so the parameter set is independent of the stream count
and identical inputs produce bitwise-identical outputs. Stream outputs
concatenate along channels and feed the pyramid head.

Activations flow channels-last, (N, T, V, C); the model accepts batches
in the (N, C, T, V) tensor layout produced by the graph stage and
transposes once on entry.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import engine
from .engine import Parameter, Tensor
from .graph import GaitGraph, build_adjacency, normalize
from .pyramid import PyramidHead

# (in_channels, out_channels, temporal stride); strides halve T where the
# width grows, keeping the trainable count near the published 0.52 M budget.
DEFAULT_CHANNEL_PLAN = (
    (3, 32, 1),
    (32, 32, 1),
    (32, 64, 2),
    (64, 64, 1),
    (64, 64, 1),
    (64, 128, 2),
)

TEMPORAL_WIDTH = 9
K_PARTITIONS = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class BatchNorm:
    """Per-channel batch normalization over (N, T, V).

    Batch statistics are used (and the running estimates updated) only in
    training mode; evaluation normalizes with the frozen running values.
    """

    def __init__(self, prefix: str, channels: int, dtype=np.float32):
        self.gamma = Parameter(f"{prefix}.gamma", np.ones(channels, dtype))
        self.beta = Parameter(f"{prefix}.beta", np.zeros(channels, dtype))
        self.running_mean = np.zeros(channels, dtype)
        self.running_var = np.ones(channels, dtype)
        self.channels = channels

    def parameters(self):
        return [self.gamma, self.beta]

    def buffers(self, prefix: str) -> dict[str, np.ndarray]:
        return {f"{prefix}.running_mean": self.running_mean,
                f"{prefix}.running_var": self.running_var}

    def forward(self, x: Tensor, training: bool) -> Tensor:
        if training:
            out, mu, var = engine.batchnorm(x, self.gamma, self.beta, BN_EPS)
            m = BN_MOMENTUM
            self.running_mean = ((1 - m) * self.running_mean + m * mu).astype(
                self.running_mean.dtype
            )
            self.running_var = ((1 - m) * self.running_var + m * var).astype(
                self.running_var.dtype
            )
            return out
        inv = (1.0 / np.sqrt(self.running_var + BN_EPS)).astype(x.dtype)
        centered = engine.add(x, Tensor(-self.running_mean.astype(x.dtype)))
        return engine.add(engine.mul(engine.mul(centered, Tensor(inv)), self.gamma), self.beta)


class STGCNBlock:
    """Spatial graph convolution then temporal convolution with residual."""

    def __init__(self, index: int, c_in: int, c_out: int, stride: int,
                 rng: np.random.Generator, residual: bool = True,
                 use_batchnorm: bool = True, dtype=np.float32):
        p = f"blocks.{index}"
        self.stride = stride
        spatial_scale = np.sqrt(2.0 / (K_PARTITIONS * c_in))
        self.spatial_weight = Parameter(
            f"{p}.spatial.weight",
            rng.normal(scale=spatial_scale, size=(K_PARTITIONS, c_in, c_out)).astype(dtype),
        )
        self.spatial_bias = Parameter(f"{p}.spatial.bias", np.zeros(c_out, dtype))
        temporal_scale = np.sqrt(2.0 / (c_out * TEMPORAL_WIDTH))
        self.temporal_weight = Parameter(
            f"{p}.temporal.weight",
            rng.normal(scale=temporal_scale, size=(c_out, c_out, TEMPORAL_WIDTH)).astype(dtype),
        )
        self.temporal_bias = Parameter(f"{p}.temporal.bias", np.zeros(c_out, dtype))
        self.bn1 = BatchNorm(f"{p}.bn1", c_out, dtype) if use_batchnorm else None
        self.bn2 = BatchNorm(f"{p}.bn2", c_out, dtype) if use_batchnorm else None
        self.residual = residual
        self.residual_weight = None
        self.residual_bn = None
        if residual and (c_in != c_out or stride != 1):
            res_scale = np.sqrt(2.0 / c_in)
            self.residual_weight = Parameter(
                f"{p}.residual.weight", rng.normal(scale=res_scale, size=(c_in, c_out)).astype(dtype)
            )
            if use_batchnorm:
                self.residual_bn = BatchNorm(f"{p}.residual.bn", c_out, dtype)

    def parameters(self):
        params = [self.spatial_weight, self.spatial_bias,
                  self.temporal_weight, self.temporal_bias]
        for bn in (self.bn1, self.bn2, self.residual_bn):
            if bn is not None:
                params += bn.parameters()
        if self.residual_weight is not None:
            params.append(self.residual_weight)
        return params

    def forward(self, x: Tensor, a_norm: np.ndarray, training: bool) -> Tensor:
        y = engine.spatial_graph_conv(x, a_norm, self.spatial_weight)
        y = engine.add(y, self.spatial_bias)
        if self.bn1 is not None:
            y = self.bn1.forward(y, training)
        y = engine.relu(y)
        y = engine.temporal_conv(y, self.temporal_weight, self.stride)
        y = engine.add(y, self.temporal_bias)
        if self.bn2 is not None:
            y = self.bn2.forward(y, training)
        if self.residual:
            res = x
            if self.stride != 1:
                res = engine.take(res, np.arange(0, x.shape[1], self.stride), axis=1)
            if self.residual_weight is not None:
                res = engine.matmul(res, self.residual_weight)
                if self.residual_bn is not None:
                    res = self.residual_bn.forward(res, training)
            y = engine.add(y, res)
        return engine.relu(y)


class SiameseSTGCN:
    """Shared-weight block stack applied to the real and pseudo streams."""

    def __init__(self, channel_plan=DEFAULT_CHANNEL_PLAN, seed: int = 0,
                 use_batchnorm: bool = True, dtype=np.float32,
                 graph: GaitGraph | None = None, alpha: float = 1e-3):
        rng = np.random.default_rng(seed)
        graph = graph or GaitGraph.body()
        self.a_norm = normalize(build_adjacency(graph), alpha)
        self.channel_plan = tuple(tuple(b) for b in channel_plan)
        self.dtype = dtype
        self.blocks = [
            STGCNBlock(i, c_in, c_out, stride, rng,
                       residual=(i > 0), use_batchnorm=use_batchnorm, dtype=dtype)
            for i, (c_in, c_out, stride) in enumerate(self.channel_plan)
        ]

    @property
    def out_channels(self) -> int:
        return self.channel_plan[-1][1]

    def out_frames(self, t_in: int) -> int:
        t = t_in
        for _, _, stride in self.channel_plan:
            t = -(-t // stride)
        return t

    def parameters(self) -> list[Parameter]:
        out = []
        for b in self.blocks:
            out += b.parameters()
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = {}
        for i, b in enumerate(self.blocks):
            for bn, tag in ((b.bn1, "bn1"), (b.bn2, "bn2"), (b.residual_bn, "residual.bn")):
                if bn is not None:
                    out.update(bn.buffers(f"blocks.{i}.{tag}"))
        return out

    def forward_stream(self, x: Tensor, training: bool) -> Tensor:
        for block in self.blocks:
            x = block.forward(x, self.a_norm, training)
        return x

    def forward(self, f_j: Tensor, f_a: Tensor, training: bool = False) -> tuple[Tensor, Tensor]:
        """Run both streams through the one shared parameter set."""
        return (
            self.forward_stream(f_j, training),
            self.forward_stream(f_a, training),
        )


def concat_features(f_jst: Tensor, f_ast: Tensor) -> Tensor:
    """Channel concatenation, real stream first: F_Sst."""
    if f_jst.shape[:3] != f_ast.shape[:3]:
        raise ValueError(f"stream shapes {f_jst.shape} and {f_ast.shape} do not align")
    return engine.concat([f_jst, f_ast], axis=3)


class GaitModel:
    """Siamese backbone plus pyramid head: sequences in, embeddings out."""

    def __init__(self, channel_plan=DEFAULT_CHANNEL_PLAN, t_frames: int = 60,
                 embed_dim: int = 128, seed: int = 0, use_batchnorm: bool = True,
                 dtype=np.float32, alpha: float = 1e-3):
        self.backbone = SiameseSTGCN(channel_plan, seed=seed,
                                     use_batchnorm=use_batchnorm, dtype=dtype, alpha=alpha)
        head_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.t_frames = t_frames
        self.head = PyramidHead(
            channels=2 * self.backbone.out_channels,
            t_frames=self.backbone.out_frames(t_frames),
            embed_dim=embed_dim,
            rng=head_rng,
            dtype=dtype,
        )
        self.embed_dim = embed_dim

    @property
    def embedding_size(self) -> int:
        return self.embed_dim * len(self.head.spec.groups)

    def parameters(self) -> list[Parameter]:
        return self.backbone.parameters() + self.head.parameters()

    def forward(self, f_j: Tensor, f_a: Tensor, training: bool = False) -> Tensor:
        """Map a pair of (N, C, T, V) stream batches to (N, D) embeddings."""
        if f_j.shape != f_a.shape:
            raise ValueError("stream inputs must share one shape")
        if f_j.shape[2] != self.t_frames:
            raise ValueError(f"expected T={self.t_frames}, got {f_j.shape[2]}")
        f_j = engine.transpose(f_j, (0, 2, 3, 1))
        f_a = engine.transpose(f_a, (0, 2, 3, 1))
        f_jst, f_ast = self.backbone.forward(f_j, f_a, training)
        embedding, _ = self.head.forward(concat_features(f_jst, f_ast))
        return embedding

    def state(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.parameters()}
        out.update(self.backbone.buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]):
        for p in self.parameters():
            if p.name not in state:
                raise KeyError(f"checkpoint is missing tensor {p.name}")
            if state[p.name].shape != p.shape:
                raise ValueError(f"{p.name}: shape {state[p.name].shape} != {p.shape}")
            p.data = state[p.name].astype(p.dtype, copy=True)
        for i, block in enumerate(self.backbone.blocks):
            for bn, tag in ((block.bn1, "bn1"), (block.bn2, "bn2"),
                            (block.residual_bn, "residual.bn")):
                if bn is None:
                    continue
                prefix = f"blocks.{i}.{tag}"
                bn.running_mean = state[f"{prefix}.running_mean"].astype(
                    bn.running_mean.dtype, copy=True)
                bn.running_var = state[f"{prefix}.running_var"].astype(
                    bn.running_var.dtype, copy=True)


def count_parameters(model) -> int:
    """Exact count of trainable scalars (network plus downstream heads)."""
    return int(sum(p.size for p in model.parameters()))


# -- checkpoint file ---------------------------------------------------------

CHECKPOINT_MAGIC = b"GAITRIG-CKPT1\n"


def save_checkpoint(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None):
    """Write the binary checkpoint: UTF-8 JSON manifest, then raw payloads."""
    manifest, payloads, offset = [], [], 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        raw = arr.astype(dtype, copy=False).tobytes()
        manifest.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype.str,
             "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": 1, "meta": meta or {}, "tensors": manifest}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(header + b"\n")
        for raw in payloads:
            fh.write(raw)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a gaitrig checkpoint")
    head_end = blob.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(blob[len(CHECKPOINT_MAGIC) : head_end].decode("utf-8"))
    base = head_end + 1
    tensors = {}
    for rec in header["tensors"]:
        start = base + rec["offset"]
        raw = blob[start : start + rec["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(rec["dtype"])).reshape(rec["shape"])
        tensors[rec["name"]] = arr.copy()
    return tensors, header["meta"]
