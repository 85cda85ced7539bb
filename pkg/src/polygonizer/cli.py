"""Command-line interface.

    polygonizer generate     synthesize a dataset directory
    polygonizer train        fit a model on a dataset, write a checkpoint
    polygonizer infer        greedy-decode polygons to GeoJSON (+ SVG overlays)
    polygonizer eval         score a checkpoint on a dataset, write metrics JSON
    polygonizer perturb-eval score under a perturbation sweep, one row per level

Common flags: --seed, --out, --config FILE (JSON with the same keys as the
echoed config; explicit flags override it). Every command is deterministic
given its flags, every artifact embeds the effective config, and errors are
one line on stderr with exit code 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetError, SceneConfig, generate_dataset, load_dataset, save_dataset
from .metrics import DEFAULT_RESOLUTION, DEFAULT_THRESHOLDS, EvalPair, metrics_json, report
from .network import ModelConfig, greedy_infer
from .parallel import map_samples
from .perturb import PerturbationSpec, sweep
from .render import write_geojson, write_svg
from .training import train


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of printing multi-line usage on bad flags."""

    def error(self, message):
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser():
    parser = _Parser(prog="polygonizer", description="Autoregressive polygon delineation toolkit.")
    parser.add_argument("--version", action="version", version=f"polygonizer {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="master RNG seed")
        p.add_argument("--config", default=None, help="JSON file of flag defaults (flags override)")

    g = sub.add_parser("generate", help="synthesize a dataset of rendered polygon scenes")
    common(g)
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--size", type=int, default=64, help="image side length / coordinate grid size")
    g.add_argument("--min-vertices", type=int, default=4)
    g.add_argument("--max-vertices", type=int, default=12)
    g.add_argument("--margin", type=int, default=4)
    g.add_argument("--noise-sigma", type=float, default=0.02)
    g.add_argument("--rectilinear-prob", type=float, default=1.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a model on a dataset directory")
    common(t)
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--out", required=True, help="checkpoint output path")
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--channels", type=_int_list, default=[16, 32, 64],
                   help="encoder stage widths, comma separated")
    t.add_argument("--blocks-per-stage", type=int, default=2)
    t.add_argument("--feature-dim", type=int, default=64)
    t.add_argument("--embed-dim", type=int, default=128)
    t.add_argument("--hidden-dim", type=int, default=128)
    t.add_argument("--attention-dim", type=int, default=64)
    t.add_argument("--lstm-layers", type=int, default=3)
    t.add_argument("--max-seq-len", type=int, default=30)
    t.add_argument("--log", default=None, help="training log path (default: <out>.log.jsonl)")
    t.add_argument("--save-optimizer", action="store_true", help="include Adam state in the checkpoint")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="greedy-decode polygons for a dataset")
    common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True, help="dataset directory")
    i.add_argument("--out", required=True, help="GeoJSON output path")
    i.add_argument("--svg", default=None, metavar="DIR", help="also write one SVG overlay per sample")
    i.add_argument("--limit", type=int, default=None, help="only the first N samples")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics JSON output path")
    e.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    e.add_argument("--thresholds", type=_float_list, default=list(DEFAULT_THRESHOLDS),
                   help="IoU thresholds for AP/AR, comma separated")
    e.add_argument("--limit", type=int, default=None)
    e.set_defaults(func=cmd_eval)

    p = sub.add_parser("perturb-eval", help="score under an input perturbation sweep")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", required=True, choices=("erase", "downsample", "rotate"))
    p.add_argument("--levels", type=_float_list, required=True,
                   help="perturbation levels, comma separated; one metrics row each")
    p.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION)
    p.add_argument("--thresholds", type=_float_list, default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_perturb_eval)

    return parser, sub


def _effective_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config")}
    return {"command": args.command, **cfg}


def cmd_generate(args) -> int:
    if args.n <= 0:
        raise UsageError("--n must be a positive integer")
    scene = SceneConfig(
        size=args.size,
        min_vertices=args.min_vertices,
        max_vertices=args.max_vertices,
        margin=args.margin,
        rectilinear_prob=args.rectilinear_prob,
        noise_sigma=args.noise_sigma,
        seed=args.seed,
    )
    samples = generate_dataset(scene, args.n)
    save_dataset(args.out, samples, grid_size=scene.size, config=_effective_config(args))
    print(f"wrote {len(samples)} samples (grid {scene.size}) to {args.out}")
    return 0


def cmd_train(args) -> int:
    samples, grid_size = load_dataset(args.data)
    config = ModelConfig(
        input_size=grid_size,
        channels=tuple(args.channels),
        blocks_per_stage=args.blocks_per_stage,
        feature_dim=args.feature_dim,
        embed_dim=args.embed_dim,
        hidden_dim=args.hidden_dim,
        attention_dim=args.attention_dim,
        n_lstm_layers=args.lstm_layers,
        max_seq_len=args.max_seq_len,
        seed=args.seed,
    )
    log_path = args.log or (args.out + ".log.jsonl")
    echo = _effective_config(args)
    with open(log_path, "w") as log:
        log.write(json.dumps({"version": 1, "config": echo}, sort_keys=True) + "\n")

        def log_epoch(entry):
            line = {"epoch": entry["epoch"], "loss": entry["loss"], "steps": entry["steps"]}
            log.write(json.dumps(line, sort_keys=True) + "\n")
            log.flush()
            print(f"epoch {entry['epoch']:3d}  loss {entry['loss']:.4f}")

        result = train(
            samples, config,
            epochs=args.epochs, batch_size=args.batch_size,
            learning_rate=args.lr, seed=args.seed, log_fn=log_epoch,
        )
    save_checkpoint(
        args.out, config, result.params,
        adam=result.adam if args.save_optimizer else None,
        metadata={"config_echo": echo, "seed": args.seed, "steps": result.steps,
                  "n_samples": len(samples), "n_skipped": result.n_skipped},
    )
    print(f"trained {result.steps} steps on {len(samples)} samples "
          f"({result.n_skipped} skipped); checkpoint: {args.out}")
    return 0


def _load_model_and_data(args):
    ckpt = load_checkpoint(args.checkpoint)
    samples, grid_size = load_dataset(args.data)
    if grid_size != ckpt.config.input_size:
        raise DatasetError(
            f"grid size mismatch: dataset {grid_size} vs checkpoint {ckpt.config.input_size}")
    if args.limit is not None:
        samples = samples[: args.limit]
    return ckpt, samples


def cmd_infer(args) -> int:
    ckpt, samples = _load_model_and_data(args)
    results = map_samples(lambda s: greedy_infer(ckpt.params, ckpt.config, s.image), samples)
    entries = [(s.id, r) for s, r in zip(samples, results)]
    write_geojson(args.out, entries, config=_effective_config(args))
    if args.svg:
        os.makedirs(args.svg, exist_ok=True)
        for s, r in zip(samples, results):
            write_svg(os.path.join(args.svg, f"{s.id}.svg"), s.image, gt=s.ring, pred=r.ring)
    n_ok = sum(1 for r in results if r.ring is not None)
    print(f"inferred {len(results)} samples ({n_ok} decoded) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt, samples = _load_model_and_data(args)
    results = map_samples(lambda s: greedy_infer(ckpt.params, ckpt.config, s.image), samples)
    pairs = [EvalPair(pred=r.ring, gt=s.ring, sample_id=s.id) for s, r in zip(samples, results)]
    rep = report(pairs, resolution=args.resolution, frame=float(ckpt.config.input_size),
                 thresholds=tuple(args.thresholds))
    doc = metrics_json([rep.to_row(level="none")], config=_effective_config(args))
    with open(args.out, "w") as f:
        f.write(doc)
    print(f"iou {rep.iou:.4f}  ap {rep.ap:.4f}  mta {rep.mta_deg:.2f}  "
          f"n_ratio {rep.n_ratio:.3f}  ({rep.n_samples} samples, {rep.n_failed} failed)")
    return 0


def cmd_perturb_eval(args) -> int:
    ckpt, samples = _load_model_and_data(args)
    levels = [int(l) if args.kind == "downsample" else l for l in args.levels]
    specs = [PerturbationSpec(kind=args.kind, level=lv, seed=args.seed) for lv in levels]
    rows = []
    for spec, rep in sweep(samples, ckpt.params, ckpt.config, specs,
                           resolution=args.resolution):
        rows.append(rep.to_row(level=spec.level))
        print(f"{spec.kind} {spec.level}: iou {rep.iou:.4f}  ap {rep.ap:.4f}  "
              f"mta {rep.mta_deg:.2f}")
    with open(args.out, "w") as f:
        f.write(metrics_json(rows, config=_effective_config(args)))
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _apply_config_file(parser, sub, argv):
    """Fold --config file values in as subcommand defaults, then re-parse."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    with open(args.config) as f:
        overrides = json.load(f)
    if not isinstance(overrides, dict):
        raise UsageError(f"--config {args.config}: expected a JSON object")
    subparser = sub.choices[args.command]
    valid = {a.dest for a in subparser._actions}
    overrides = {k: v for k, v in overrides.items() if k != "command"}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise UsageError(f"--config {args.config}: unknown keys {unknown}")
    converted = {}
    for k, v in overrides.items():
        if k == "channels" and isinstance(v, list):
            v = [int(x) for x in v]
        if k in ("levels", "thresholds") and isinstance(v, list):
            v = [float(x) for x in v]
        converted[k] = v
    subparser.set_defaults(**converted)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser, sub = build_parser()
    try:
        args = _apply_config_file(parser, sub, argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
