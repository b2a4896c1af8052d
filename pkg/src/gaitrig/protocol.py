"""Dataset manifests, splits, training loop and gallery/probe evaluation.

The benchmark protocol: subjects split into two sex-balanced halves, the
network trained on one half, and rank-1 accuracy reported on the other
with the gallery restricted to the lightest-occlusion condition and
same-view gallery entries excluded per probe.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine
from .config import RunConfig
from .engine import Tensor
from .fusion import load_sequence
from .graph import ChannelStats, compute_channel_stats, sequence_to_tensors
from .losses import (
    ArcfaceConfig,
    FusionLossConfig,
    TripletConfig,
    fusion_loss,
    init_arcface_weights,
)
from .network import GaitModel, load_checkpoint, save_checkpoint
from .skeleton import IncompleteSkeletonError, build_dual_skeleton, select_joints

log = logging.getLogger("gaitrig.protocol")

CONDITIONS = ("LCL", "BOB", "SOB", "LOB", "MCL", "HCL", "MG-S", "MG-D", "MG-T")
VIEWS = ("0", "T45", "90", "T135", "180", "T225", "270", "T315")

MANIFEST_FORMAT = "gaitrig-manifest"
REAL_FRAME_BOUNDS = (12, 80)


class ManifestError(ValueError):
    pass


class SplitError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, batch_ids: list[str]):
        super().__init__(
            f"non-finite loss at iteration {iteration}; offending batch: {batch_ids}"
        )
        self.iteration = iteration
        self.batch_ids = batch_ids


@dataclass(frozen=True)
class Subject:
    id: str
    sex: str

    def __post_init__(self):
        if self.sex not in ("F", "M"):
            raise ManifestError(f"subject {self.id}: sex must be 'F' or 'M'")


@dataclass(frozen=True)
class SequenceRecord:
    subject: str
    condition: str
    view: str
    frames: int
    path: str

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ManifestError(f"unknown condition {self.condition!r}")
        if self.view not in VIEWS:
            raise ManifestError(f"unknown view {self.view!r}")

    @property
    def key(self) -> str:
        return f"{self.subject}/{self.condition}/{self.view}/{self.path}"


@dataclass
class DatasetManifest:
    subjects: list[Subject]
    sequences: list[SequenceRecord]
    source: str = "synthetic"  # synthetic data may exceed the real frame bounds

    def __post_init__(self):
        ids = [s.id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate subject ids")
        known = set(ids)
        lo, hi = REAL_FRAME_BOUNDS
        for rec in self.sequences:
            if rec.subject not in known:
                raise ManifestError(f"sequence for unknown subject {rec.subject!r}")
            if self.source == "capture" and not lo <= rec.frames <= hi:
                raise ManifestError(
                    f"{rec.path}: {rec.frames} frames outside the capture bounds {REAL_FRAME_BOUNDS}"
                )

    def by_subject(self) -> dict[str, list[SequenceRecord]]:
        out: dict[str, list[SequenceRecord]] = {s.id: [] for s in self.subjects}
        for rec in self.sequences:
            out[rec.subject].append(rec)
        return out


def save_manifest(manifest: DatasetManifest, path: str | Path, provenance: dict | None = None):
    doc = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "source": manifest.source,
        "subjects": [{"id": s.id, "sex": s.sex} for s in manifest.subjects],
        "sequences": [
            {"subject": r.subject, "condition": r.condition, "view": r.view,
             "frames": r.frames, "path": r.path}
            for r in manifest.sequences
        ],
    }
    doc.update(provenance or {})
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def load_manifest(path: str | Path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid manifest: {exc}") from exc
    if doc.get("format") != MANIFEST_FORMAT:
        raise ManifestError(f"{path}: not a gaitrig manifest")
    subjects = [Subject(s["id"], s["sex"]) for s in doc["subjects"]]
    sequences = [
        SequenceRecord(r["subject"], r["condition"], r["view"], int(r["frames"]), r["path"])
        for r in doc["sequences"]
    ]
    return DatasetManifest(subjects, sequences, source=doc.get("source", "synthetic"))


# -- split -------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    train_ids: tuple
    test_ids: tuple
    seed: int


def split_subjects(manifest: DatasetManifest, seed: int) -> Split:
    """Deterministic half/half split with equal sex counts per side.

    Each sex is halved independently; an odd remainder goes to the train
    side.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5B117]))
    train, test = [], []
    for sex in ("F", "M"):
        ids = sorted(s.id for s in manifest.subjects if s.sex == sex)
        if len(ids) < 2:
            raise SplitError(f"need at least 2 subjects of sex {sex}, found {len(ids)}")
        order = rng.permutation(len(ids))
        half = len(ids) // 2
        test += [ids[i] for i in order[:half]]
        train += [ids[i] for i in order[half:]]
    split = Split(tuple(sorted(train)), tuple(sorted(test)), seed)
    assert not set(split.train_ids) & set(split.test_ids)
    return split


@dataclass(frozen=True)
class BatchPlan:
    p_subjects: int = 8
    k_samples: int = 4


def sample_batch(
    rng: np.random.Generator,
    by_subject: dict[str, list[SequenceRecord]],
    plan: BatchPlan,
) -> list[SequenceRecord]:
    """P identities x K sequences; identities without K sequences repeat some."""
    ids = sorted(by_subject)
    if len(ids) < plan.p_subjects:
        raise SplitError(f"batch needs {plan.p_subjects} subjects, have {len(ids)}")
    chosen = rng.choice(len(ids), size=plan.p_subjects, replace=False)
    batch = []
    for i in chosen:
        seqs = by_subject[ids[i]]
        replace = len(seqs) < plan.k_samples
        picks = rng.choice(len(seqs), size=plan.k_samples, replace=replace)
        batch += [seqs[j] for j in picks]
    return batch


# -- sequence loading --------------------------------------------------------


@dataclass
class PreparedSequence:
    record: SequenceRecord
    f_j: np.ndarray  # (3, T, 16)
    f_a: np.ndarray


def load_dual_skeletons(path: str | Path):
    """Read a fused sequence file and build dual skeletons, dropping
    frames with missing selected joints."""
    frames = load_sequence(path)
    duals = []
    for frame in frames:
        try:
            duals.append(build_dual_skeleton(select_joints(frame)))
        except IncompleteSkeletonError:
            continue
    return duals


def prepare_sequences(
    records: list[SequenceRecord],
    root: Path,
    t_out: int,
    real_stats: ChannelStats | None = None,
    pseudo_stats: ChannelStats | None = None,
    dtype=np.float32,
    workers: int = 1,
) -> list[PreparedSequence]:
    """Tensorize sequences in deterministic (key-sorted) order.

    Sequences with fewer than 2 usable frames are skipped with a warning.
    With workers > 1 files are loaded concurrently; the merge order stays
    the sorted-key order regardless of scheduling.
    """
    ordered = sorted(records, key=lambda r: r.key)

    def build(rec):
        duals = load_dual_skeletons(root / rec.path)
        if len(duals) < 2:
            return rec, None
        return rec, sequence_to_tensors(duals, t_out, real_stats, pseudo_stats, dtype=dtype)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(build, ordered))
    else:
        results = [build(rec) for rec in ordered]
    out = []
    for rec, tensors in results:
        if tensors is None:
            log.warning("skipping %s: fewer than 2 usable frames", rec.path)
            continue
        out.append(PreparedSequence(rec, tensors[0], tensors[1]))
    return out


# -- optimizer ---------------------------------------------------------------


class MomentumSGD:
    def __init__(self, params, lr: float, momentum: float = 0.9):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v -= self.lr * p.grad
            p.data = p.data + v

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


# -- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_path: Path
    trace_path: Path
    losses: list[float] = field(repr=False, default_factory=list)


def train(cfg: RunConfig, manifest: DatasetManifest, root: Path, out_dir: Path,
          subjects: list[str] | None = None) -> TrainResult:
    """Train the recognizer on the given subjects (default: the split's
    train half) and write a checkpoint plus a per-iteration loss trace."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if subjects is None:
        subjects = list(split_subjects(manifest, cfg.seed).train_ids)
    subjects = sorted(subjects)
    records = [r for r in manifest.sequences if r.subject in set(subjects)]
    if not records:
        raise SplitError("training split has no sequences")

    seedseq = np.random.SeedSequence([cfg.seed, 0x7EA1])
    init_seed, sample_seed, arc_seed = seedseq.spawn(3)
    t_out = cfg.model.t_out

    raw = prepare_sequences(records, root, t_out)
    real_stats = pseudo_stats = None
    if cfg.train.standardize:
        real_stats = compute_channel_stats([p.f_j for p in raw])
        pseudo_stats = compute_channel_stats([p.f_a for p in raw])
        prepared = prepare_sequences(records, root, t_out, real_stats, pseudo_stats)
    else:
        prepared = raw
    by_subject: dict[str, list] = {}
    for p in prepared:
        by_subject.setdefault(p.record.subject, []).append(p)
    label_of = {sid: i for i, sid in enumerate(sorted(by_subject))}

    model = GaitModel(
        channel_plan=cfg.model.channel_plan,
        t_frames=t_out,
        embed_dim=cfg.model.embed_dim,
        seed=int(np.random.default_rng(init_seed).integers(2**31)),
        use_batchnorm=cfg.model.use_batchnorm,
        alpha=cfg.model.degree_alpha,
    )
    arc_weights = init_arcface_weights(
        len(label_of), model.embedding_size, np.random.default_rng(arc_seed)
    )
    optimizer = MomentumSGD(model.parameters() + [arc_weights],
                            cfg.train.learning_rate, cfg.train.momentum)
    triplet_cfg = TripletConfig(cfg.loss.triplet_margin, cfg.loss.per_group_triplet)
    arc_cfg = ArcfaceConfig(cfg.loss.arcface_scale, cfg.loss.arcface_margin)
    fusion_cfg = FusionLossConfig(cfg.loss.lam)
    plan = BatchPlan(min(cfg.train.p_subjects, len(by_subject)), cfg.train.k_samples)
    rng = np.random.default_rng(sample_seed)
    decay_at = {int(cfg.train.iterations * f) for f in cfg.train.decay_points}

    losses = []
    for it in range(cfg.train.iterations):
        if it in decay_at and it > 0:
            optimizer.lr *= cfg.train.decay_factor
        batch = sample_batch(rng, by_subject, plan)
        f_j = Tensor(np.stack([b.f_j for b in batch]))
        f_a = Tensor(np.stack([b.f_a for b in batch]))
        labels = np.array([label_of[b.record.subject] for b in batch])
        optimizer.zero_grad()
        emb = model.forward(f_j, f_a, training=True)
        loss = fusion_loss(emb, labels, arc_weights, triplet_cfg, arc_cfg, fusion_cfg)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(it, [b.record.key for b in batch])
        loss.backward()
        optimizer.step()
        losses.append(value)

    meta = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "format_version": 1,
        "t_out": t_out,
        "iterations": cfg.train.iterations,
        "train_subjects": subjects,
    }
    state = model.state()
    if real_stats is not None:
        state["stats.real.mean"] = real_stats.mean
        state["stats.real.std"] = real_stats.std
        state["stats.pseudo.mean"] = pseudo_stats.mean
        state["stats.pseudo.std"] = pseudo_stats.std
    ckpt_path = out_dir / "model.ckpt"
    save_checkpoint(ckpt_path, state, meta)
    trace_path = out_dir / "loss_trace.txt"
    header = f"# gaitrig-loss-trace v1 config={cfg.hash()} seed={cfg.seed}\n"
    with open(trace_path, "w", encoding="utf-8") as fh:
        fh.write(header)
        for i, v in enumerate(losses):
            fh.write(f"{i} {v:.10g}\n")
    return TrainResult(ckpt_path, trace_path, losses)


def restore_model(cfg: RunConfig, ckpt_path: str | Path):
    """Rebuild the model and channel stats recorded in a checkpoint."""
    state, meta = load_checkpoint(ckpt_path)
    model = GaitModel(
        channel_plan=cfg.model.channel_plan,
        t_frames=int(meta.get("t_out", cfg.model.t_out)),
        embed_dim=cfg.model.embed_dim,
        seed=0,
        use_batchnorm=cfg.model.use_batchnorm,
        alpha=cfg.model.degree_alpha,
    )
    model.load_state(state)
    real_stats = pseudo_stats = None
    if "stats.real.mean" in state:
        real_stats = ChannelStats(state["stats.real.mean"], state["stats.real.std"])
        pseudo_stats = ChannelStats(state["stats.pseudo.mean"], state["stats.pseudo.std"])
    return model, real_stats, pseudo_stats, meta


# -- embedding extraction and evaluation --------------------------------------


@dataclass
class EmbeddingBatch:
    embeddings: np.ndarray  # (N, D)
    subjects: list[str]
    conditions: list[str]
    views: list[str]

    def __len__(self):
        return len(self.subjects)


def extract(model: GaitModel, prepared: list[PreparedSequence],
            batch_size: int = 32) -> EmbeddingBatch:
    """Evaluation-mode embeddings, deterministic order (input order kept)."""
    embs, subjects, conditions, views = [], [], [], []
    for start in range(0, len(prepared), batch_size):
        chunk = prepared[start : start + batch_size]
        f_j = Tensor(np.stack([p.f_j for p in chunk]))
        f_a = Tensor(np.stack([p.f_a for p in chunk]))
        embs.append(model.forward(f_j, f_a, training=False).data)
        for p in chunk:
            subjects.append(p.record.subject)
            conditions.append(p.record.condition)
            views.append(p.record.view)
    embeddings = np.concatenate(embs, axis=0) if embs else np.zeros((0, model.embedding_size))
    return EmbeddingBatch(embeddings, subjects, conditions, views)


@dataclass
class EvalResult:
    accuracy: dict  # (condition, view) -> rank-1 accuracy
    counts: dict  # (condition, view) -> probe count

    def condition_mean(self, condition: str) -> float:
        cells = [(a, self.counts[k]) for k, a in self.accuracy.items() if k[0] == condition]
        total = sum(c for _, c in cells)
        return sum(a * c for a, c in cells) / total if total else float("nan")

    def overall_mean(self) -> float:
        total = sum(self.counts.values())
        if not total:
            return float("nan")
        return sum(a * self.counts[k] for k, a in self.accuracy.items()) / total

    def to_csv(self) -> str:
        conditions = [c for c in CONDITIONS if any(k[0] == c for k in self.accuracy)]
        views = [v for v in VIEWS if any(k[1] == v for k in self.accuracy)]
        lines = ["condition," + ",".join(views) + ",mean"]
        for cond in conditions:
            row = [cond]
            for v in views:
                acc = self.accuracy.get((cond, v))
                row.append("" if acc is None else f"{100 * acc:.1f}")
            row.append(f"{100 * self.condition_mean(cond):.1f}")
            lines.append(",".join(row))
        lines.append(",".join(["overall"] + [""] * len(views) + [f"{100 * self.overall_mean():.1f}"]))
        return "\n".join(lines) + "\n"


def evaluate(gallery: EmbeddingBatch, probes: EmbeddingBatch,
             metric: str = "euclidean") -> EvalResult:
    """Rank-1 nearest-neighbor identification, excluding identical-view
    gallery entries for each probe."""
    if metric not in ("euclidean", "cosine"):
        raise ValueError(f"unknown metric {metric!r}")
    g = gallery.embeddings.astype(np.float64)
    p = probes.embeddings.astype(np.float64)
    if metric == "cosine":
        g = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
        p = p / np.maximum(np.linalg.norm(p, axis=1, keepdims=True), 1e-12)
    d2 = (p * p).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2.0 * (p @ g.T)
    gallery_views = np.array(gallery.views)
    gallery_subjects = np.array(gallery.subjects)
    known = set(gallery.subjects)

    hits: dict = {}
    counts: dict = {}
    for i in range(len(probes)):
        key = (probes.conditions[i], probes.views[i])
        counts[key] = counts.get(key, 0) + 1
        hits.setdefault(key, 0)
        if probes.subjects[i] not in known:
            log.warning("probe subject %s absent from gallery", probes.subjects[i])
            continue
        mask = gallery_views != probes.views[i]
        if not mask.any():
            log.warning("no gallery candidates for probe %d after view exclusion", i)
            continue
        candidates = np.where(mask)[0]
        nearest = candidates[np.argmin(d2[i, candidates])]
        if gallery_subjects[nearest] == probes.subjects[i]:
            hits[key] += 1
    accuracy = {k: hits[k] / counts[k] for k in counts}
    return EvalResult(accuracy, counts)


def export_embeddings(batch: EmbeddingBatch, group_names: list[str],
                      embed_dim: int) -> str:
    """Comma-separated embedding table; header names the pyramid groups."""
    cols = []
    for name in group_names:
        cols += [f"{name}_{i:03d}" for i in range(embed_dim)]
    lines = ["subject,condition,view," + ",".join(cols)]
    for i in range(len(batch)):
        values = ",".join(f"{v:.8g}" for v in batch.embeddings[i])
        lines.append(f"{batch.subjects[i]},{batch.conditions[i]},{batch.views[i]},{values}")
    return "\n".join(lines) + "\n"
