"""Command-line entry point: ``gmsf {synth,train,eval,infer,gradcheck}``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import TrainConfig, format_kv, load_config
from .data_io import SynthConfig, export_ply, read_dataset, read_scene, synth_scene, write_dataset, write_scene
from .errors import FormatError, InvalidInputError, NumericError
from .evaluation import MetricsAccumulator, format_metric_rows

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

EPILOG = """\
exit codes:
  0  success
  2  usage error (bad flag, bad config value)
  3  data error (missing, truncated or corrupt scene/checkpoint file)
  4  numeric failure (NaN during training, failed gradient check)

config files hold one key=value per line; flags override file values,
which override built-in defaults."""


class UsageError(Exception):
    pass


def _on_off(text):
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


TRAIN_FLAGS = {
    # flag dest -> TrainConfig field
    "points": "n_points", "dim": "d", "gct_layers": "gct_layers", "k": "k",
    "backbone": "backbone", "local_transformer": "local_transformer", "lr": "lr_max",
    "steps": "total_steps", "batch": "batch_size", "seed": "seed",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmsf", description=__doc__, epilog=EPILOG,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, helptext):
        return sub.add_parser(name, help=helptext, epilog=EPILOG,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    p = command("synth", "generate a directory of synthetic scene pairs")
    p.add_argument("--config", help="key=value file of generator settings")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--scenes", type=int, default=8)
    p.add_argument("--points", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--occlusion", type=float)
    p.add_argument("--translation", type=float)
    p.add_argument("--rotation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--extent", type=float)

    p = command("train", "train a model on a dataset directory")
    p.add_argument("--config", help="key=value file of training settings")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ckpt", help="checkpoint path (default OUT/model.ckpt)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--seed", type=int)
    p.add_argument("--points", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--gct-layers", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--backbone", choices=["edgeconv", "pointnet", "mlp"])
    p.add_argument("--local-transformer", type=_on_off, metavar="{on,off}")
    p.add_argument("--lr", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--batch", type=int)

    p = command("eval", "evaluate a checkpoint on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="checkpoint to evaluate")
    p.add_argument("--oracle", action="store_true",
                   help="predict the ground truth instead of running a model")
    p.add_argument("--out", help="also write the metric rows to OUT/metrics.txt")

    p = command("infer", "predict flow for one scene file")
    p.add_argument("--data", required=True, help="input .sflw scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="output .sflw with predicted flow")
    p.add_argument("--ply", help="optional PLY visualization path")

    p = command("gradcheck", "finite-difference check of every differentiable op")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds per op")
    p.add_argument("--out", help="also write the report to this file")
    return parser


def _model_source(args):
    from .training import load_model
    if args.ckpt is None:
        raise UsageError("--ckpt is required unless --oracle is given")
    return load_model(args.ckpt)


def cmd_synth(args, out):
    overrides = {k: v for k, v in {
        "n_points": args.points, "seed": args.seed, "n_rigid_clusters": args.clusters,
        "occlusion_fraction": args.occlusion, "translation_scale": args.translation,
        "rotation_scale": args.rotation, "deformation_sigma": args.noise,
        "extent": args.extent}.items() if v is not None}
    cfg = load_config(SynthConfig, args.config, overrides)
    if args.scenes < 1:
        raise UsageError("--scenes must be positive")
    scenes = []
    for i in range(args.scenes):
        scenes.append(synth_scene(SynthConfig(**{**asdict(cfg), "seed": cfg.seed + i})))
    names = write_dataset(args.out, scenes, cfg)
    (Path(args.out) / "config.txt").write_text(format_kv(asdict(cfg)))
    out(f"wrote {len(names)} scenes to {args.out}")
    return EXIT_OK


def cmd_train(args, out):
    from .training import Trainer, TrainingDiverged, reference_mode
    overrides = {field: getattr(args, flag) for flag, field in TRAIN_FLAGS.items()
                 if getattr(args, flag) is not None}
    cfg = load_config(TrainConfig, args.config, overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(format_kv(cfg.to_dict()))
    ckpt = Path(args.ckpt) if args.ckpt else out_dir / "model.ckpt"
    dataset = read_dataset(args.data)
    with reference_mode(), open(out_dir / "train_log.txt", "w") as log:
        def record(line):
            log.write(line + "\n")
            out(line)
        if args.resume:
            trainer = Trainer.from_checkpoint(args.resume, dataset, cfg)
        else:
            trainer = Trainer(cfg, dataset)
        try:
            trainer.run(ckpt_path=ckpt, on_record=record, eval_set=dataset)
        except TrainingDiverged as exc:
            if exc.last_good is not None:
                ckpt.write_bytes(exc.last_good)
            raise
    out(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(args, out):
    from .training import predict
    dataset = read_dataset(args.data)
    model = None if args.oracle else _model_source(args)
    acc = MetricsAccumulator()
    for pair in dataset:
        pred = pair.gt_flow if model is None else predict(model, pair)
        acc.add(pred, pair.gt_flow, pair.occlusion)
    rows = format_metric_rows(acc.result())
    out(rows)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "metrics.txt").write_text(rows + "\n")
    return EXIT_OK


def cmd_infer(args, out):
    from .training import predict
    pair = read_scene(args.data)
    model = _model_source(args)
    flow = predict(model, pair)
    write_scene(pair, args.out, flow=flow)
    if args.ply:
        export_ply(pair.source.points, pair.target.points, flow, args.ply)
    out(f"wrote {args.out}")
    return EXIT_OK


def cmd_gradcheck(args, out):
    from .gradcheck import run_suite
    lines = []

    def report(res):
        lines.append(res.line())
        out(res.line())

    results, seconds = run_suite(range(args.seed, args.seed + args.seeds), on_result=report)
    failed = [r for r in results if not r.passed]
    worst = max(r.error for r in results)
    summary = (f"gradcheck checks={len(results)} failed={len(failed)} "
               f"max_rel_err={worst:.3e} seconds={seconds:.1f}")
    lines.append(summary)
    out(summary)
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    return EXIT_NUMERIC if failed else EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "gradcheck": cmd_gradcheck}


def main(argv=None, out=print) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    err = lambda msg: print(f"gmsf: error: {msg}", file=sys.stderr)  # noqa: E731
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        err(exc)
        return EXIT_USAGE
    except (FormatError, InvalidInputError, FileNotFoundError, IsADirectoryError) as exc:
        err(exc)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        err(exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        err(exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
