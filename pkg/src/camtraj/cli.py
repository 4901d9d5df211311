"""Command-line surface tying the pipeline together.

Commands: synth, preprocess, tag, caption, tokenize, detokenize, train,
train-contrastive, generate, evaluate, export.  Data goes to stdout or the
requested files; diagnostics go to stderr.  Exit codes: 0 success, 1
input/parse error, 2 empty result or metric-precondition shortfall.

A JSON config file (via --config or the CAMTRAJ_CONFIG environment
variable) supplies defaults by flag name; explicit flags always win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as traj_io
from . import metrics as metrics_mod
from .errors import CamtrajError, ParseError, ValidationError
from .geometry import CameraPose, Trajectory
from .preprocess import CleaningConfig, KalmanConfig, clean_trajectory, \
    kalman_smooth, resample_fixed
from .synth import DatasetManifest, SynthConfig, build_dataset, \
    single_action_pool
from .tagging import (
    MotionTag,
    TagThresholds,
    caption_from_tags,
    segment_tags,
    segments_to_json_records,
    smooth_tags,
    tag_frames,
)
from .tokenizer import CodecConfig, canonicalize, decode_trajectory, \
    encode_trajectory

CONFIG_ENV = "CAMTRAJ_CONFIG"
EXIT_OK = 0
EXIT_INPUT = 1
EXIT_EMPTY = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser honoring the exit-code contract (usage error -> 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INPUT)


def _thresholds(args) -> TagThresholds:
    return TagThresholds(v_min=args.v_min, dominance=args.dominance,
                         w_min=args.w_min, min_run=args.min_run)


def _add_threshold_flags(sp):
    sp.add_argument("--v-min", type=float, default=0.1)
    sp.add_argument("--dominance", type=float, default=0.3)
    sp.add_argument("--w-min", type=float, default=0.02)
    sp.add_argument("--min-run", type=int, default=5)


def _label_pool(spec: str):
    if spec == "moving":
        return ()
    if spec == "single":
        return tuple(single_action_pool())
    if spec == "full":
        from .synth import full_pool
        return tuple(full_pool())
    return tuple(MotionTag.from_code(code) for code in spec.split(","))


# Commands ---------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = SynthConfig(
        segments_min=args.segments_min, segments_max=args.segments_max,
        frames=args.frames, speed_min=args.speed_min, speed_max=args.speed_max,
        turn_min=args.turn_min, turn_max=args.turn_max,
        easing=not args.no_easing, label_pool=_label_pool(args.pool),
        caption_style=args.style, rgbd=args.rgbd, rgbd_size=args.rgbd_size)
    manifest = build_dataset(args.count, cfg, args.seed, args.out)
    print(Path(args.out) / "manifest.json")
    print(f"wrote {len(manifest.records)} records", file=sys.stderr)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    traj = traj_io.load_any_trajectory(args.input)
    cleaning = CleaningConfig(alpha=args.alpha, percentile=args.percentile,
                              min_segment=args.min_segment)
    segments = clean_trajectory(traj, cleaning)
    if not segments:
        print("no segments survived cleaning", file=sys.stderr)
        return EXIT_EMPTY
    kalman = KalmanConfig(process_sigma=args.kalman_sigmas[0],
                          measurement_sigma=args.kalman_sigmas[1])
    for i, (lo, hi) in enumerate(segments):
        poses = traj.poses[lo:hi]
        smoothed = kalman_smooth(np.array([p.translation for p in poses]), kalman)
        seg = Trajectory(tuple(
            CameraPose(p.rotation, tuple(t), p.intrinsics)
            for p, t in zip(poses, smoothed)), traj.fps)
        if args.resample:
            seg = resample_fixed(seg, args.resample)
        out = Path(f"{args.out}_seg{i:02d}.jsonl")
        traj_io.save_trajectory(seg, out)
        print(out)
    return EXIT_OK


def cmd_tag(args) -> int:
    traj = traj_io.load_any_trajectory(args.input)
    th = _thresholds(args)
    tags = smooth_tags(tag_frames(traj, th), th.min_run)
    records = segments_to_json_records(segment_tags(tags))
    lines = "".join(json.dumps(r) + "\n" for r in records)
    if args.out:
        Path(args.out).write_text(lines)
        print(args.out)
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_caption(args) -> int:
    traj = traj_io.load_any_trajectory(args.input)
    th = _thresholds(args)
    tags = smooth_tags(tag_frames(traj, th), th.min_run)
    print(caption_from_tags(segment_tags(tags), args.style))
    return EXIT_OK


def cmd_tokenize(args) -> int:
    cfg = CodecConfig(bins=args.bins, traj_len=args.len)
    sequences = []
    for path in args.inputs:
        traj = traj_io.load_any_trajectory(path)
        sequences.append(encode_trajectory(canonicalize(traj), cfg))
    traj_io.save_tokens(sequences, args.out)
    print(args.out)
    return EXIT_OK


def cmd_detokenize(args) -> int:
    cfg = CodecConfig(bins=args.bins, traj_len=args.len)
    sequences = traj_io.load_tokens(args.input, args.bins)
    outputs = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for i, ts in enumerate(sequences):
            traj = decode_trajectory(ts, cfg, image_size=(args.image_size,) * 2,
                                     fps=args.fps)
            out = (Path(args.out) if len(sequences) == 1
                   else Path(f"{args.out.removesuffix('.jsonl')}_{i:03d}.jsonl"))
            traj_io.save_trajectory(traj, out)
            outputs.append(out)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    for out in outputs:
        print(out)
    return EXIT_OK


def _model_config(args):
    from .model import ModelConfig, desk_config

    if args.paper_scale:
        return ModelConfig(bins=args.bins, traj_len=args.len)
    return desk_config(bins=args.bins, traj_len=args.len,
                       latent_dim=args.latent_dim, layers=args.layers,
                       heads=args.heads)


def cmd_train(args) -> int:
    from .model import TrainConfig, train

    manifest = DatasetManifest.load(args.manifest)
    cfg = _model_config(args)
    schedule = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                           lr=args.lr, seed=args.seed, threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(manifest, cfg, schedule, modality=args.modality,
                   checkpoint_path=out_dir / "checkpoint.pt",
                   resume_from=args.resume,
                   log=lambda msg: print(msg, file=sys.stderr))
    result.write_loss_csv(out_dir / "loss.csv")
    print(out_dir / "checkpoint.pt")
    print(out_dir / "loss.csv")
    return EXIT_OK


def cmd_generate(args) -> int:
    import torch

    from .model import generate, load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    model = bundle["model"]
    if args.rgbd and bundle["modality"] != "rgbd":
        print("error: checkpoint was trained text-only; --rgbd requires an "
              "rgbd-trained checkpoint", file=sys.stderr)
        return EXIT_INPUT
    if not args.rgbd and bundle["modality"] == "rgbd":
        print("error: checkpoint was trained on text+RGBD; pass --rgbd "
              "IMAGE.pgm DEPTH.pgm", file=sys.stderr)
        return EXIT_INPUT
    images = depths = None
    if args.rgbd:
        img = traj_io.load_pgm(args.rgbd[0]).pixels / 255.0
        dep = traj_io.load_pgm(args.rgbd[1]).pixels / 255.0
        images = torch.tensor(np.repeat(img[:, :, None], 3, axis=2),
                              dtype=torch.float32)[None]
        depths = torch.tensor(dep, dtype=torch.float32)[None]
    latent = model.encode_conditions([args.caption], images, depths)
    seqs = generate(model, latent, sampler=args.sampler, top_k=args.top_k,
                    top_p=args.top_p, temperature=args.temperature,
                    seed=args.seed)
    cfg = CodecConfig(bins=model.cfg.bins, traj_len=model.cfg.traj_len)
    traj = decode_trajectory(seqs[0], cfg)
    traj_io.save_trajectory(traj, args.out)
    th = TagThresholds()
    recovered = caption_from_tags(
        segment_tags(smooth_tags(tag_frames(traj, th), th.min_run)))
    print(recovered)
    print(args.out, file=sys.stderr)
    return EXIT_OK


def _labels_from_tag_records(tags: list[dict]) -> frozenset[str]:
    labels: set[str] = set()
    for rec in tags:
        labels |= MotionTag.from_code(rec["tag"]).atomic_labels()
    return frozenset(labels)


def cmd_evaluate(args) -> int:
    manifest = DatasetManifest.load(args.real)
    records = manifest.of_split(args.split) if args.split != "all" else manifest.records
    gen_files = sorted(Path(args.gen).glob("*.jsonl"))
    requested = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(requested) - {"f1", "fid", "coverage", "clip"}
    if unknown:
        print(f"error: unknown metrics {sorted(unknown)}", file=sys.stderr)
        return EXIT_INPUT
    if not records or not gen_files:
        print(f"error: no samples (real {len(records)}, generated "
              f"{len(gen_files)})", file=sys.stderr)
        return EXIT_EMPTY

    gen_trajs = [traj_io.load_trajectory(p) for p in gen_files]
    real_trajs = [traj_io.load_trajectory(manifest.resolve(r.trajectory))
                  for r in records]

    report = {
        "metric_space": metrics_mod.FEATURIZER_ID,
        "samples": {"real": len(real_trajs), "generated": len(gen_trajs)},
        "config_hash": manifest.config_hash,
        "split": args.split,
        "metrics": {},
    }
    failures = []
    for metric in requested:
        try:
            if metric == "f1":
                n = min(len(gen_trajs), len(records))
                refs = [_labels_from_tag_records(r.tags) for r in records[:n]]
                rep = metrics_mod.tag_f1(gen_trajs[:n], refs)
                report["metrics"]["f1"] = {
                    "precision": rep.precision, "recall": rep.recall, "f1": rep.f1}
            elif metric == "fid":
                real_fs = metrics_mod.featurize_set(real_trajs)
                gen_fs = metrics_mod.featurize_set(gen_trajs)
                report["metrics"]["fid"] = metrics_mod.fid(real_fs, gen_fs)
            elif metric == "coverage":
                real_fs = metrics_mod.featurize_set(real_trajs)
                gen_fs = metrics_mod.featurize_set(gen_trajs)
                report["metrics"]["coverage"] = metrics_mod.coverage(
                    real_fs, gen_fs, k=args.k)
            elif metric == "clip":
                if not args.contrastive_head:
                    raise ValidationError(
                        "clip metric needs --contrastive-head (train one with "
                        "`camtraj train-contrastive`)")
                head = metrics_mod.ContrastiveHead.load(args.contrastive_head)
                n = min(len(gen_trajs), len(records))
                captions = [r.caption for r in records[:n]]
                score = metrics_mod.contrastive_score(captions, gen_trajs[:n], head)
                rng = np.random.default_rng(0)
                shuffled = [captions[i] for i in rng.permutation(n)]
                baseline = metrics_mod.contrastive_score(shuffled, gen_trajs[:n], head)
                report["metrics"]["clip"] = {"score": score,
                                             "random_pairing": baseline}
        except ValidationError as exc:
            failures.append(f"{metric}: {exc}")
    out = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(out + "\n")
        print(args.out)
    else:
        print(out)
    if failures:
        for f in failures:
            print(f"precondition failed -> {f}", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


def cmd_train_contrastive(args) -> int:
    from .model.config import desk_config

    manifest = DatasetManifest.load(args.manifest)
    records = manifest.of_split("train")
    if not records:
        print("error: manifest has no train records", file=sys.stderr)
        return EXIT_EMPTY
    captions = [r.caption for r in records]
    feats = np.stack([
        metrics_mod.featurize(traj_io.load_trajectory(manifest.resolve(r.trajectory)))
        for r in records])
    head = metrics_mod.ContrastiveHead(desk_config())
    head.fit(captions, feats, epochs=args.epochs, seed=args.seed,
             log=lambda msg: print(msg, file=sys.stderr))
    head.save(args.out)
    print(args.out)
    return EXIT_OK


def cmd_export(args) -> int:
    if args.format not in ("csv", "ply-polyline"):
        print(f"error: unknown export format {args.format!r} "
              f"(csv or ply-polyline)", file=sys.stderr)
        return EXIT_INPUT
    traj = traj_io.load_any_trajectory(args.input)
    if args.format == "csv":
        traj_io.export_csv(traj, args.out)
    else:
        traj_io.export_ply_polyline(traj, args.out)
    print(args.out)
    return EXIT_OK


# Parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="camtraj",
                     description="Camera-trajectory toolkit pipeline")
    parser.add_argument("--config", default=None,
                        help=f"JSON defaults file (or ${CONFIG_ENV})")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap torch/numpy parallelism (0 = library default)")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="build a synthetic dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("-n", "--count", type=int, default=100)
    sp.add_argument("--frames", type=int, default=60)
    sp.add_argument("--segments-min", type=int, default=1)
    sp.add_argument("--segments-max", type=int, default=3)
    sp.add_argument("--speed-min", type=float, default=0.02)
    sp.add_argument("--speed-max", type=float, default=0.10)
    sp.add_argument("--turn-min", type=float, default=0.025)
    sp.add_argument("--turn-max", type=float, default=0.050)
    sp.add_argument("--pool", default="moving",
                    help="moving | single | full | comma-separated tag codes")
    sp.add_argument("--style", default="sentence", choices=("sentence", "terse"))
    sp.add_argument("--no-easing", action="store_true")
    sp.add_argument("--rgbd", action="store_true")
    sp.add_argument("--rgbd-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("preprocess", help="clean, smooth, resample")
    sp.add_argument("input")
    sp.add_argument("--out", required=True, help="output path prefix")
    sp.add_argument("--alpha", type=float, default=18.0)
    sp.add_argument("--percentile", type=float, default=95.0)
    sp.add_argument("--min-segment", type=int, default=5)
    sp.add_argument("--kalman-sigmas", type=float, nargs=2, default=(0.5, 1.0),
                    metavar=("PROCESS", "MEASUREMENT"))
    sp.add_argument("--resample", type=int, default=0)
    sp.set_defaults(func=cmd_preprocess)

    sp = sub.add_parser("tag", help="motion-tag a trajectory (JSON lines)")
    sp.add_argument("input")
    sp.add_argument("--out", default=None)
    _add_threshold_flags(sp)
    sp.set_defaults(func=cmd_tag)

    sp = sub.add_parser("caption", help="template caption for a trajectory")
    sp.add_argument("input")
    sp.add_argument("--style", default="sentence", choices=("sentence", "terse"))
    _add_threshold_flags(sp)
    sp.set_defaults(func=cmd_caption)

    sp = sub.add_parser("tokenize", help="trajectories -> token file")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--bins", type=int, default=256)
    sp.add_argument("--len", type=int, default=60)
    sp.set_defaults(func=cmd_tokenize)

    sp = sub.add_parser("detokenize", help="token file -> trajectories")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    sp.add_argument("--bins", type=int, default=256)
    sp.add_argument("--len", type=int, default=60)
    sp.add_argument("--image-size", type=int, default=512)
    sp.add_argument("--fps", type=float, default=1.0)
    sp.set_defaults(func=cmd_detokenize)

    sp = sub.add_parser("train", help="train the conditional generator")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--modality", default="text", choices=("text", "rgbd"))
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--batch-size", type=int, default=16)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--bins", type=int, default=256)
    sp.add_argument("--len", type=int, default=30)
    sp.add_argument("--latent-dim", type=int, default=128)
    sp.add_argument("--layers", type=int, default=4)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--paper-scale", action="store_true",
                    help="use the full-scale architecture defaults")
    sp.add_argument("--resume", default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("train-contrastive",
                        help="fit the text/trajectory contrastive head")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=60)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_train_contrastive)

    sp = sub.add_parser("generate", help="sample a trajectory from a caption")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--caption", required=True)
    sp.add_argument("--rgbd", nargs=2, metavar=("IMAGE", "DEPTH"), default=None)
    sp.add_argument("--sampler", default="nucleus",
                    choices=("greedy", "topk", "nucleus"))
    sp.add_argument("--top-k", type=int, default=50)
    sp.add_argument("--top-p", type=float, default=0.9)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="metric report (JSON)")
    sp.add_argument("--real", required=True, help="dataset manifest")
    sp.add_argument("--gen", required=True, help="directory of generated .jsonl")
    sp.add_argument("--metrics", default="f1,fid,coverage")
    sp.add_argument("--split", default="test")
    sp.add_argument("-k", type=int, default=5, help="coverage neighbors")
    sp.add_argument("--contrastive-head", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("export", help="viewable artifact (csv / ply-polyline)")
    sp.add_argument("input")
    sp.add_argument("--format", default="csv")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    return parser


def _apply_config_file(parser, argv) -> None:
    path = None
    for i, arg in enumerate(argv):
        if arg == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return
    try:
        values = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"config file {path}: {exc}") from None
    if not isinstance(values, dict):
        raise ParseError(f"config file {path}: expected a JSON object")
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                dests = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        if args.threads > 0:
            import torch

            torch.set_num_threads(args.threads)
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ValidationError, CamtrajError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
