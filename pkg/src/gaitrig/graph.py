"""Spatio-temporal gait graphs: partitioned adjacency and input tensors.

The spatial graph is the 16-joint bone tree with self-loops. Its adjacency
is split into three partitions relative to the body center (pelvis): the
node itself, neighbors closer to the center (centripetal) and neighbors
farther away (centrifugal). Each partition is normalized symmetrically
with a small additive constant on the degree so empty rows stay finite.

Skeleton sequences become two (3, T, 16) streams: per-frame pelvis-centered
joint coordinates and the pseudo-skeleton node values, both linearly
resampled to a fixed temporal length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skeleton import BONE_EDGES, N_SELECTED, PELVIS, DualSkeleton

DEGREE_ALPHA = 1e-3
N_PARTITIONS = 3


@dataclass(frozen=True)
class GaitGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]
    center: int

    @classmethod
    def body(cls) -> "GaitGraph":
        return cls(N_SELECTED, BONE_EDGES, PELVIS)


def hop_distances(g: GaitGraph) -> np.ndarray:
    """BFS hop count from every node to the center node."""
    neighbors = [[] for _ in range(g.n_nodes)]
    for a, b in g.edges:
        neighbors[a].append(b)
        neighbors[b].append(a)
    dist = np.full(g.n_nodes, -1, dtype=np.int64)
    dist[g.center] = 0
    queue = [g.center]
    while queue:
        node = queue.pop(0)
        for nxt in neighbors[node]:
            if dist[nxt] < 0:
                dist[nxt] = dist[node] + 1
                queue.append(nxt)
    if (dist < 0).any():
        raise ValueError("gait graph must be connected")
    return dist


def build_adjacency(g: GaitGraph) -> np.ndarray:
    """(3, V, V) 0/1 stack: self / centripetal / centrifugal partitions.

    Entry (i, j) of partition k says that neighbor j belongs to subset k
    of node i; the three partitions sum to adjacency-plus-self-loops.
    """
    dist = hop_distances(g)
    stack = np.zeros((N_PARTITIONS, g.n_nodes, g.n_nodes), dtype=np.float64)
    stack[0] = np.eye(g.n_nodes)
    for a, b in g.edges:
        for i, j in ((a, b), (b, a)):
            if dist[j] < dist[i]:
                stack[1, i, j] = 1.0
            else:
                stack[2, i, j] = 1.0
    return stack


def normalize(stack: np.ndarray, alpha: float = DEGREE_ALPHA) -> np.ndarray:
    """Per-partition symmetric normalization D^{-1/2} A D^{-1/2}.

    Degrees are row sums plus alpha, so all-zero rows map to all-zero rows
    instead of dividing by zero.
    """
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    out = np.empty_like(stack, dtype=np.float64)
    for k in range(stack.shape[0]):
        d = stack[k].sum(axis=1) + alpha
        inv_sqrt = 1.0 / np.sqrt(d)
        out[k] = inv_sqrt[:, None] * stack[k] * inv_sqrt[None, :]
    return out


def resample_linear(values: np.ndarray, t_out: int) -> np.ndarray:
    """Piecewise-linear resampling of the leading (time) axis to t_out steps.

    Endpoints are preserved exactly; t_in == t_out is the identity.
    """
    t_in = values.shape[0]
    if t_in < 2:
        raise ValueError("need at least 2 frames to resample")
    if t_out < 2:
        raise ValueError("t_out must be >= 2")
    if t_in == t_out:
        return values.copy()
    pos = np.linspace(0.0, t_in - 1.0, t_out)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, t_in - 2)
    frac = pos - lo
    flat = values.reshape(t_in, -1)
    out = flat[lo] * (1.0 - frac)[:, None] + flat[lo + 1] * frac[:, None]
    out[0] = flat[0]
    out[-1] = flat[-1]
    return out.reshape((t_out,) + values.shape[1:])


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel standardization constants (training-set statistics)."""

    mean: np.ndarray  # (3,)
    std: np.ndarray  # (3,)

    def apply(self, tensor: np.ndarray) -> np.ndarray:
        return (tensor - self.mean[:, None, None]) / self.std[:, None, None]


def sequence_to_tensors(
    frames: list[DualSkeleton],
    t_out: int,
    real_stats: ChannelStats | None = None,
    pseudo_stats: ChannelStats | None = None,
    dtype=np.float32,
) -> tuple[np.ndarray, np.ndarray]:
    """Build the (3, t_out, 16) real and pseudo gait tensors of a sequence.

    The real stream is pelvis-centered per frame; the pseudo stream is used
    as-is (bone vectors are already translation-free). Channel statistics,
    when given, standardize each stream; tests pass None for the identity.
    """
    if len(frames) < 2:
        raise ValueError("need at least 2 frames")
    real = np.stack([d.real for d in frames])  # (T, 16, 3)
    pseudo = np.stack([d.pseudo for d in frames])
    real = real - real[:, PELVIS : PELVIS + 1, :]
    real = resample_linear(real, t_out)
    pseudo = resample_linear(pseudo, t_out)
    # (T, V, C) -> (C, T, V)
    real = np.ascontiguousarray(real.transpose(2, 0, 1))
    pseudo = np.ascontiguousarray(pseudo.transpose(2, 0, 1))
    if real_stats is not None:
        real = real_stats.apply(real)
    if pseudo_stats is not None:
        pseudo = pseudo_stats.apply(pseudo)
    if not (np.isfinite(real).all() and np.isfinite(pseudo).all()):
        raise ValueError("gait tensors contain non-finite values")
    return real.astype(dtype), pseudo.astype(dtype)


def compute_channel_stats(tensors: list[np.ndarray]) -> ChannelStats:
    """Mean/std per channel over a training set of (3, T, V) tensors."""
    stacked = np.concatenate([t.reshape(3, -1) for t in tensors], axis=1)
    mean = stacked.mean(axis=1)
    std = stacked.std(axis=1)
    std = np.where(std < 1e-8, 1.0, std)
    return ChannelStats(mean=mean.astype(np.float64), std=std.astype(np.float64))
