"""Metric-learning losses over gait embeddings.

The training objective is a convex combination of a batch-hard triplet
loss (pull same-identity embeddings together across views, push other
identities apart) and an additive-angular-margin classification loss over
L2-normalized embeddings and class weights, weighted 0.9 / 0.1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Parameter, Tensor


class BatchError(ValueError):
    """No anchor in the batch has both a positive and a negative."""


class DegenerateEmbeddingError(ValueError):
    """An embedding has zero norm and cannot be angle-normalized."""


@dataclass(frozen=True)
class TripletConfig:
    margin: float = 0.2
    per_group: bool = False  # average per-group losses instead of one joint distance

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("triplet margin must be > 0")


@dataclass(frozen=True)
class ArcfaceConfig:
    scale: float = 30.0
    margin: float = 0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("arcface scale must be > 0")
        if not 0.0 <= self.margin < math.pi / 2:
            raise ValueError("arcface margin must be in [0, pi/2)")


@dataclass(frozen=True)
class FusionLossConfig:
    lam: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")


def pairwise_sqdist(emb: Tensor) -> Tensor:
    """(N, N) squared euclidean distances, clamped at zero."""
    sq = engine.tsum(engine.mul(emb, emb), axis=1, keepdims=True)
    cross = engine.matmul(emb, engine.transpose(emb, (1, 0)))
    d2 = engine.add(engine.add(sq, engine.transpose(sq, (1, 0))), engine.mul(cross, -2.0))
    return engine.relu(d2)  # guards tiny negative values from cancellation


def batch_hard_triplet(
    emb: Tensor, labels: np.ndarray, cfg: TripletConfig = TripletConfig()
) -> Tensor:
    """Mean over anchors of hinge(margin + hardest-positive - hardest-negative).

    The hardest positive is the farthest same-identity sample (self
    excluded), the hardest negative the closest other-identity sample.
    Anchors lacking either are excluded from the mean; an all-excluded
    batch raises BatchError.
    """
    labels = np.asarray(labels)
    n = emb.shape[0]
    if labels.shape != (n,):
        raise ValueError("labels must align with the embedding batch")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    if not valid.any():
        raise BatchError("no anchor has both a positive and a negative")
    idx = np.where(valid)[0]

    d2 = pairwise_sqdist(emb)
    d2v = engine.take(d2, idx, axis=0)
    pos = engine.where(pos_mask[idx], d2v, Tensor(np.zeros(d2v.shape, emb.dtype)))
    d_pos = engine.sqrt(engine.tmax(pos, axis=1))
    inf = np.full(d2v.shape, np.inf, dtype=emb.dtype)
    neg = engine.where(neg_mask[idx], d2v, Tensor(inf))
    d_neg = engine.sqrt(engine.tmin(neg, axis=1))
    hinge = engine.relu(engine.add(engine.add(d_pos, engine.mul(d_neg, -1.0)), cfg.margin))
    return engine.tmean(hinge)


def _row_normalize(x: Tensor) -> Tensor:
    norms = engine.sqrt(engine.tsum(engine.mul(x, x), axis=1, keepdims=True))
    return engine.div(x, norms)


def init_arcface_weights(
    n_classes: int, dim: int, rng: np.random.Generator, dtype=np.float32
) -> Parameter:
    """Class-weight matrix with L2-normalized rows."""
    w = rng.normal(size=(n_classes, dim))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return Parameter("loss.arcface.weight", w.astype(dtype))


def arcface(
    emb: Tensor,
    labels: np.ndarray,
    weights: Tensor,
    cfg: ArcfaceConfig = ArcfaceConfig(),
) -> Tensor:
    """Additive angular margin softmax over normalized embeddings.

    Logit for the true class is s*cos(theta + m), others s*cos(theta);
    cos(theta) is clamped away from +-1 before the arc shift. The
    normalization makes the loss invariant to positive rescaling of the
    embeddings.
    """
    labels = np.asarray(labels)
    n, _ = emb.shape
    n_classes = weights.shape[0]
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label outside the class-weight range")
    row_norms = np.linalg.norm(emb.data, axis=1)
    if (row_norms == 0.0).any():
        raise DegenerateEmbeddingError("zero-norm embedding in arcface batch")

    e_norm = _row_normalize(emb)
    w_norm = _row_normalize(weights)
    cos = engine.matmul(e_norm, engine.transpose(w_norm, (1, 0)))
    cos = engine.clip(cos, -1.0 + 1e-7, 1.0 - 1e-7)
    sin = engine.sqrt(engine.add(engine.mul(engine.mul(cos, cos), -1.0), 1.0))
    shifted = engine.add(
        engine.mul(cos, math.cos(cfg.margin)), engine.mul(sin, -math.sin(cfg.margin))
    )
    onehot = np.zeros((n, n_classes), dtype=bool)
    onehot[np.arange(n), labels] = True
    logits = engine.mul(engine.where(onehot, shifted, cos), cfg.scale)
    true_logit = engine.tsum(engine.mul(logits, onehot.astype(emb.data.dtype)), axis=1)
    return engine.tmean(engine.add(engine.logsumexp(logits, axis=1),
                                   engine.mul(true_logit, -1.0)))


def fusion_loss(
    emb: Tensor,
    labels: np.ndarray,
    arcface_weights: Tensor,
    triplet_cfg: TripletConfig = TripletConfig(),
    arcface_cfg: ArcfaceConfig = ArcfaceConfig(),
    cfg: FusionLossConfig = FusionLossConfig(),
    group_embs: list[Tensor] | None = None,
) -> Tensor:
    """lambda * batch-hard triplet + (1 - lambda) * arcface."""
    if triplet_cfg.per_group:
        if not group_embs:
            raise ValueError("per-group triplet requested without group embeddings")
        parts = [batch_hard_triplet(g, labels, triplet_cfg) for g in group_embs]
        tri = parts[0]
        for p in parts[1:]:
            tri = engine.add(tri, p)
        tri = engine.mul(tri, 1.0 / len(parts))
    else:
        tri = batch_hard_triplet(emb, labels, triplet_cfg)
    arc = arcface(emb, labels, arcface_weights, arcface_cfg)
    return engine.add(engine.mul(tri, cfg.lam), engine.mul(arc, 1.0 - cfg.lam))
