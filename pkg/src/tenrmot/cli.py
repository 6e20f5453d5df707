"""Command line entry point: ``tenrmot {generate,train,track,eval,ablate}``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .config import RunConfig, load_config, parse_overrides
from .errors import TenrmotError

log = logging.getLogger("tenrmot")


# -- shared flag plumbing -------------------------------------------------------


def _flag(key: str) -> str:
    return "--" + key.removeprefix("model.").replace("_", "-")


def add_run_flags(p: argparse.ArgumentParser) -> None:
    """One ``--flag`` per RunConfig field (model fields drop their prefix)."""
    p.add_argument("--config", help="key = value file with optional [run] / [model] sections")
    group = p.add_argument_group("run configuration")
    for key, default in RunConfig().to_flat().items():
        if key == "seed":
            continue
        group.add_argument(_flag(key), dest=f"cfg:{key}", metavar=type(default).__name__.upper(),
                           help=f"default {default}")


def run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:") and v is not None}
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    return parse_overrides(pairs, cfg)


def _print(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


# -- subcommands ------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .data import SceneSpec, generate

    spec = SceneSpec()
    overrides = {}
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not hasattr(spec, key):
            raise TenrmotError(f"unknown scene setting {key!r}")
        current = getattr(spec, key)
        if isinstance(current, tuple):
            parts = [p.strip() for p in value.split(",")]
            overrides[key] = tuple(type(current[0])(p) for p in parts)
        else:
            overrides[key] = type(current)(value)
    for name in ("n_train", "n_test", "length"):
        if getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if args.seed is not None:
        overrides["seed"] = args.seed
    spec = dataclasses.replace(spec, **overrides)
    root = generate(spec, args.out)
    _print(f"dataset\t{root}\ntrain\t{spec.n_train}\ntest\t{spec.n_test}\nseed\t{spec.seed}\n")
    return 0


def cmd_train(args) -> int:
    from .report import plot_loss_curve
    from .train import train

    cfg = run_config(args)
    out = Path(cfg.out)
    result = train(cfg, out_dir=out, checkpoint_every=args.checkpoint_every)
    plot_loss_curve(result.log, out / "loss.png")
    last = result.log[-1] if result.log else {"epoch": 0, "loss": float("nan")}
    _print(f"checkpoint\t{out / 'model.ckpt'}\nepochs\t{last['epoch']}\nfinal_loss\t{last['loss']:.6f}\n")
    return 0


def cmd_track(args) -> int:
    from .inference import track

    result = track(args.checkpoint, args.sequence, args.expression, args.out)
    _print(result.dumps() if not args.out else f"tracks\t{args.out}\nrecords\t{len(result.records)}\n")
    return 0


def cmd_eval(args) -> int:
    from .formats import load as load_tracks
    from .metrics import evaluate
    from .report import metric_table, plot_threshold_curves, write_results

    modes = ["box", "mask"] if args.mode == "both" else [args.mode]
    results = {}
    if args.pred:
        if not args.gt:
            raise TenrmotError("--pred needs --gt")
        pred, gt = load_tracks(args.pred), load_tracks(args.gt)
        for m in modes:
            results[m] = evaluate(pred.to_trajectories(), gt.to_trajectories(), m)
    elif args.checkpoint:
        from .checkpoint import Checkpoint, restore_model
        from .data import load_dataset
        from .inference import benchmark

        model = restore_model(Checkpoint.load(args.checkpoint))
        dataset = load_dataset(args.dataset)
        for m in modes:
            pred_dir = Path(args.out) / f"tracks_{m}" if args.out else None
            results[m] = benchmark(model, dataset, args.split, m, out_dir=pred_dir)
    else:
        raise TenrmotError("give either --pred/--gt files or --checkpoint with --dataset")
    _print(metric_table(results))
    if args.out:
        out = Path(args.out)
        write_results(results, out)
        plot_threshold_curves(results, out / "hota_curves.png")
    return 0


def cmd_ablate(args) -> int:
    from .ablate import SWEEPS, ablate
    from .report import plot_ablation, rows_table

    cfg = run_config(args)
    sweeps = [s.strip() for s in args.sweeps.split(",")] if args.sweeps else list(SWEEPS)
    out = Path(cfg.out)
    rows = ablate(cfg, sweeps=sweeps, split=args.split, retrain_alpha=not args.alpha_at_inference,
                  out_dir=out)
    _print(rows_table(rows))
    plot_ablation(rows, out / "ablation.png")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tenrmot", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="random seed")
        p.set_defaults(fn=fn)
        return p

    p = command("generate", cmd_generate, "render a synthetic referring-tracking benchmark")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--length", type=int, help="frames per sequence")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other scene setting")

    p = command("train", cmd_train, "train a model from scratch")
    add_run_flags(p)
    p.add_argument("--checkpoint-every", type=int, default=0, metavar="EPOCHS")

    p = command("track", cmd_track, "track one expression through one sequence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sequence", required=True, help="sequence directory")
    p.add_argument("--expression", required=True)
    p.add_argument("--out", help="prediction file (default: print to stdout)")

    p = command("eval", cmd_eval, "score prediction files or a checkpoint")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", default="data/bench")
    p.add_argument("--split", default="test")
    p.add_argument("--mode", choices=("box", "mask", "both"), default="box")
    p.add_argument("--out", help="directory for metrics.csv, metrics.json and figures")

    p = command("ablate", cmd_ablate, "run the alpha / component / matching-cue grid")
    add_run_flags(p)
    p.add_argument("--sweeps", help="comma list from alpha,components,cues (default all)")
    p.add_argument("--split", default="test")
    p.add_argument("--alpha-at-inference", action="store_true",
                   help="vary alpha only when tracking instead of retraining per value")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (TenrmotError, ValueError, OSError) as exc:
        print(f"tenrmot {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
