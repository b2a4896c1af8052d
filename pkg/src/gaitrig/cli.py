"""Command-line entry point wiring all stages into reproducible runs.

Subcommands: gen-synth, fuse, train, eval, params, export-embeddings.
Configuration comes from a JSON file (--config, or the GAITRIG_CONFIG
environment variable) with --set key=value overrides; flags beat the file,
the file beats defaults. Every command exits 0 on success and prints one
machine-readable JSON diagnostic line to stderr on failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import RunConfig, load_config
from .fusion import FusionPolicy, align_frame, fuse, load_sequence, optimized_to_frame, save_sequence
from .geometry import chain_to_master, load_calibration
from .network import GaitModel, count_parameters
from .protocol import (
    evaluate,
    export_embeddings,
    extract,
    load_manifest,
    prepare_sequences,
    restore_model,
    split_subjects,
    train,
)

CONFIG_ENV = "GAITRIG_CONFIG"


def _provenance_line(kind: str, cfg: RunConfig) -> str:
    return f"# gaitrig-{kind} v1 config={cfg.hash()} seed={cfg.seed}\n"


def cmd_gen_synth(cfg: RunConfig, args) -> int:
    from .synth import build_synthetic_manifest

    manifest = build_synthetic_manifest(
        out_dir=args.out or cfg.out_dir,
        n_ids=args.ids,
        conditions=tuple(args.conditions),
        views=tuple(args.views),
        reps=args.reps,
        seed=cfg.seed,
        frame_range=(args.min_frames, args.max_frames),
        noise_mm=args.noise,
        fusion_cfg=cfg.fusion,
        chain_mode=cfg.chain_mode,
    )
    print(json.dumps({"subjects": len(manifest.subjects),
                      "sequences": len(manifest.sequences),
                      "out": str(args.out or cfg.out_dir)}))
    return 0


def cmd_fuse(cfg: RunConfig, args) -> int:
    calib = load_calibration(args.calibration or cfg.calibration)
    policy = FusionPolicy(cfg.fusion.strategy, cfg.fusion.outlier_threshold,
                          cfg.fusion.min_confidence)
    per_device = []
    for path in args.inputs:
        frames = load_sequence(path)
        if not frames:
            raise ValueError(f"{path}: empty sequence")
        devices = {f.device for f in frames}
        if len(devices) != 1:
            raise ValueError(f"{path}: mixed devices {sorted(devices)}")
        device = devices.pop()
        chain = chain_to_master(calib, device, cfg.chain_mode)
        per_device.append([align_frame(f, chain) for f in frames])
    n = min(len(frames) for frames in per_device)
    fused = []
    for t in range(n):
        fused.append(optimized_to_frame(fuse([frames[t] for frames in per_device], policy)))
    save_sequence(fused, args.out, provenance={"seed": cfg.seed, "config": cfg.hash(),
                                               "chain_mode": cfg.chain_mode})
    print(json.dumps({"frames": n, "out": args.out}))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    root = Path(args.root or ".")
    manifest = load_manifest(args.manifest or cfg.manifest)
    out_dir = Path(args.out or cfg.out_dir)
    subjects = None
    if args.subjects == "all":
        subjects = [s.id for s in manifest.subjects]
    result = train(cfg, manifest, root, out_dir, subjects=subjects)
    print(json.dumps({
        "checkpoint": str(result.checkpoint_path),
        "trace": str(result.trace_path),
        "iterations": len(result.losses),
        "final_loss": result.losses[-1] if result.losses else None,
    }))
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    root = Path(args.root or ".")
    manifest = load_manifest(args.manifest or cfg.manifest)
    model, real_stats, pseudo_stats, meta = restore_model(cfg, args.checkpoint)
    t_out = int(meta.get("t_out", cfg.model.t_out))
    split = split_subjects(manifest, cfg.seed)
    ids = set(split.test_ids) if args.subjects == "test" else {s.id for s in manifest.subjects}
    gallery_recs = [r for r in manifest.sequences
                    if r.subject in ids and r.condition == args.gallery_condition]
    probe_recs = [r for r in manifest.sequences
                  if r.subject in ids and r.condition != args.gallery_condition]
    if not gallery_recs:
        raise ValueError(f"no gallery sequences under condition {args.gallery_condition!r}")
    workers = cfg.workers
    gallery = extract(model, prepare_sequences(gallery_recs, root, t_out,
                                               real_stats, pseudo_stats, workers=workers))
    probes = extract(model, prepare_sequences(probe_recs, root, t_out,
                                              real_stats, pseudo_stats, workers=workers))
    result = evaluate(gallery, probes, metric=args.metric)
    text = _provenance_line("eval", cfg) + result.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_params(cfg: RunConfig, args) -> int:
    model = GaitModel(
        channel_plan=cfg.model.channel_plan,
        t_frames=cfg.model.t_out,
        embed_dim=cfg.model.embed_dim,
        seed=cfg.seed,
        use_batchnorm=cfg.model.use_batchnorm,
        alpha=cfg.model.degree_alpha,
    )
    n = count_parameters(model)
    print(json.dumps({"parameters": n, "millions": round(n / 1e6, 4)}))
    return 0


def cmd_export_embeddings(cfg: RunConfig, args) -> int:
    root = Path(args.root or ".")
    manifest = load_manifest(args.manifest or cfg.manifest)
    model, real_stats, pseudo_stats, meta = restore_model(cfg, args.checkpoint)
    t_out = int(meta.get("t_out", cfg.model.t_out))
    if args.subjects == "all":
        ids = {s.id for s in manifest.subjects}
    else:
        split = split_subjects(manifest, cfg.seed)
        ids = set(split.train_ids if args.subjects == "train" else split.test_ids)
    records = [r for r in manifest.sequences if r.subject in ids]
    prepared = prepare_sequences(records, root, t_out, real_stats, pseudo_stats,
                                 workers=cfg.workers)
    batch = extract(model, prepared)
    names = [name for name, _ in model.head.spec.groups]
    text = _provenance_line("embeddings", cfg) + export_embeddings(
        batch, names, model.embed_dim
    )
    Path(args.out).write_text(text, encoding="utf-8")
    print(json.dumps({"rows": len(batch), "out": args.out}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaitrig",
        description="Multi-view skeleton fusion and gait recognition toolkit",
    )
    parser.add_argument("--config", default=None,
                        help=f"config JSON path (default: ${CONFIG_ENV})")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic fused dataset")
    p.add_argument("--out", default=None)
    p.add_argument("--ids", type=int, default=8)
    p.add_argument("--conditions", nargs="+", default=["LCL"])
    p.add_argument("--views", nargs="+", default=["0", "90", "180", "270"])
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--min-frames", type=int, default=30)
    p.add_argument("--max-frames", type=int, default=70)
    p.add_argument("--noise", type=float, default=6.0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("fuse", help="align and fuse raw per-device sequences")
    p.add_argument("--calibration", default=None)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("train", help="train the recognizer")
    p.add_argument("--manifest", default=None)
    p.add_argument("--root", default=None, help="directory sequence paths are relative to")
    p.add_argument("--out", default=None)
    p.add_argument("--subjects", choices=["split", "all"], default="split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="gallery/probe rank-1 evaluation")
    p.add_argument("--manifest", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--gallery-condition", default="LCL")
    p.add_argument("--metric", choices=["euclidean", "cosine"], default="euclidean")
    p.add_argument("--subjects", choices=["test", "all"], default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("params", help="report the trainable parameter count")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("export-embeddings", help="write embeddings as CSV")
    p.add_argument("--manifest", default=None)
    p.add_argument("--root", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", choices=["train", "test", "all"], default="all")
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config_path = args.config or os.environ.get(CONFIG_ENV) or None
        cfg = load_config(config_path, args.overrides)
        return args.func(cfg, args)
    except Exception as exc:  # one machine-readable diagnostic line, nonzero exit
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
