"""Command-line entry point: ``fmce <command> [options]``.

Exit codes: 0 ok, 2 bad input or arguments, 3 loss never converged,
4 degenerate curve or infeasible segmentation, 10-16 failing pipeline stage
(the stage commands reuse their stage's code).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, fmcs_dataset
from .errors import (
    DegenerateCurveError,
    FmceError,
    InfeasibleSegmentationError,
    LossLogError,
    NotConvergedError,
)
from .fmce_net import FmceModel, FmceTrainConfig, evaluate, train_fmce
from .loss_analysis import CqiConfig, SmoothingConfig, SmoothingMode, read_loss_log, write_loss_csv
from .nn import OptimizerConfig
from .original_task import TrainConfig, dataset_for_trace, generate_dataset, load_trace, train_original
from .parallel import deterministic_blas
from .phases import PhaseConfig
from .pipeline import STAGES, PIPELINE_MU, PipelineConfig, StageError, gradcam_samples, run_pipeline
from .report import analyze, dumps_json, partial_analysis, write_curves, write_json

log = logging.getLogger("fmce")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_SEGMENTATION = 4

# options that only control where output goes or how verbose it is
_NOT_CONFIG = {"command", "func", "print_config", "verbose"}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _non_negative_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _index_list(text):
    try:
        out = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("no indices given")
    return out


def _mode(text):
    try:
        return SmoothingMode.parse(text).value.replace("_", "-")
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# -- parser --------------------------------------------------------------------

def _add_analysis_options(p, mu_default, k_default):
    p.add_argument("--alpha", type=float, default=0.85, help="smoothing factor in [0, 1)")
    p.add_argument("--mode", type=_mode, default="recursive", help="smoothing recurrence: recursive or paper-literal")
    p.add_argument("--window", type=_positive_int, default=10, help="CQI window in epochs")
    p.add_argument("--mu", type=float, default=mu_default, help="CQI convergence threshold")
    p.add_argument("--k", type=_positive_int, default=k_default, help="number of convergence scores")


def _add_fmce_options(p):
    p.add_argument("--fmce-epochs", type=_non_negative_int, default=20, help="FMCE-Net training epochs")
    p.add_argument("--fmce-batch-size", type=_positive_int, default=64, help="FMCE-Net minibatch size")
    p.add_argument("--fmce-lr", type=float, default=1e-3, help="FMCE-Net Adam learning rate")
    p.add_argument("--no-normalise", action="store_true", help="skip per-channel input standardisation")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="fmce", description="Loss-curve convergence analysis and "
                                     "feature-map convergence scoring.", formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(func=func)
        p.add_argument("--print-config", action="store_true",
                       help="print the parsed configuration as JSON and exit")
        return p

    p = add("analyze", cmd_analyze, "Smooth a loss log, detect convergence and place epoch markers.")
    p.add_argument("--loss", required=True, help="loss log (CSV with epoch,loss header or JSON lines)")
    _add_analysis_options(p, mu_default=1e-4, k_default=10)
    p.add_argument("--run-id", default=None, help="run id in the report (default: file stem)")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.add_argument("--emit-curves", default=None, metavar="DIR", help="write curves.csv, markers.csv and curves.png")
    p.add_argument("--no-figures", action="store_true", help="with --emit-curves, skip the PNG")

    p = add("pipeline", cmd_pipeline, "Run the whole desk-scale experiment into one directory.")
    p.add_argument("--seed", type=int, default=7, help="seed for data, training and splitting")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--epochs", type=_positive_int, default=60, help="original-task epochs")
    p.add_argument("--n-per-class", type=_positive_int, default=500, help="images per class")
    p.add_argument("--batch-size", type=_positive_int, default=64, help="original-task minibatch size")
    p.add_argument("--lr", type=float, default=1e-3, help="original-task Adam learning rate")
    _add_analysis_options(p, mu_default=PIPELINE_MU, k_default=5)
    _add_fmce_options(p)
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = add("train-original", cmd_train_original, "Generate the synthetic images and train the original task.")
    p.add_argument("--seed", type=int, default=7, help="seed for data and training")
    p.add_argument("--out", required=True, help="trace directory (loss.csv, config.json, checkpoints/)")
    p.add_argument("--epochs", type=_positive_int, default=60, help="training epochs")
    p.add_argument("--n-per-class", type=_positive_int, default=500, help="images per class")
    p.add_argument("--batch-size", type=_positive_int, default=64, help="minibatch size")
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")

    p = add("dataset", cmd_dataset, "Build and split the FMCS dataset from a trace and a phase plan.")
    p.add_argument("--trace", required=True, help="trace directory written by train-original")
    p.add_argument("--plan", required=True, help="plan JSON written by analyze")
    p.add_argument("--out", required=True, help="dataset file (manifest.json is written beside it)")
    p.add_argument("--split-seed", type=int, default=0, help="seed for the train/test split")

    p = add("train-fmce", cmd_train_fmce, "Train FMCE-Net on a split FMCS dataset.")
    p.add_argument("--dataset", required=True, help="FMCS dataset file")
    p.add_argument("--out", required=True, help="model checkpoint path (.fmck; a .json sidecar is written)")
    p.add_argument("--seed", type=int, default=0, help="seed for initialisation and shuffling")
    _add_fmce_options(p)

    p = add("eval-fmce", cmd_eval_fmce, "Score a trained FMCE-Net on a dataset split.")
    p.add_argument("--model", required=True, help="model checkpoint path")
    p.add_argument("--dataset", required=True, help="FMCS dataset file")
    p.add_argument("--split", choices=("test", "train", "all"), default="test", help="samples to score")
    p.add_argument("--out", default=None, help="metrics JSON path (default: stdout)")
    p.add_argument("--no-figures", action="store_true", help="skip the confusion-matrix PNG")

    p = add("gradcam", cmd_gradcam, "Write Grad-CAM heatmaps for selected samples.")
    p.add_argument("--model", required=True, help="model checkpoint path")
    p.add_argument("--dataset", required=True, help="FMCS dataset file")
    p.add_argument("--indices", type=_index_list, required=True, help="comma-separated sample indices")
    p.add_argument("--target", type=_positive_int, default=None, help="score to explain (default: each label)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip the heatmap grid PNG")
    return parser


# -- config snapshot -------------------------------------------------------------

def config_snapshot(args: argparse.Namespace) -> dict:
    """Every parsed option of a command, keyed by flag name."""
    snap = {"command": args.command}
    snap["options"] = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    return snap


def args_from_snapshot(snapshot: dict) -> list:
    """Command line that parses back to ``snapshot``."""
    argv = [snapshot["command"]]
    for key, value in snapshot["options"].items():
        flag = "--" + key.replace("_", "-")
        if isinstance(value, bool):
            if value:
                argv.append(flag)
        elif value is None:
            continue
        elif isinstance(value, list):
            argv += [flag, ",".join(str(v) for v in value)]
        else:
            argv += [flag, repr(value) if isinstance(value, float) else str(value)]
    return argv


# -- helpers -----------------------------------------------------------------------

def _emit(doc, out):
    if out:
        write_json(out, doc)
    else:
        sys.stdout.write(dumps_json(doc))


def _stage(name, fn):
    try:
        return fn()
    except (FmceError, ValueError, OSError, IndexError) as exc:
        raise CliError(f"{name}: {exc}", STAGES[name]) from exc


# -- commands ------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    try:
        series = read_loss_log(args.loss, args.run_id)
        smoothing = SmoothingConfig(args.alpha, args.mode)
        cqi_cfg = CqiConfig(args.window, args.mu)
        phase_cfg = PhaseConfig(args.k)
    except (OSError, ValueError) as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        analysis = analyze(series, smoothing, cqi_cfg, phase_cfg)
    except (NotConvergedError, DegenerateCurveError, InfeasibleSegmentationError, LossLogError) as exc:
        if args.emit_curves:
            write_curves(partial_analysis(series, smoothing, cqi_cfg, phase_cfg), args.emit_curves,
                         not args.no_figures)
        if isinstance(exc, NotConvergedError):
            raise CliError(str(exc), EXIT_NOT_CONVERGED) from exc
        if isinstance(exc, LossLogError):
            raise CliError(str(exc), EXIT_USAGE) from exc
        raise CliError(str(exc), EXIT_SEGMENTATION) from exc
    _emit(analysis.report(), args.out)
    if args.emit_curves:
        write_curves(analysis, args.emit_curves, not args.no_figures)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig(
        seed=args.seed, k=args.k, epochs=args.epochs, n_per_class=args.n_per_class,
        batch_size=args.batch_size, learning_rate=args.lr, alpha=args.alpha, mode=args.mode,
        window=args.window, mu=args.mu, fmce_epochs=args.fmce_epochs,
        fmce_batch_size=args.fmce_batch_size, fmce_learning_rate=args.fmce_lr,
        normalise=not args.no_normalise, figures=not args.no_figures,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        result = run_pipeline(cfg, args.out)
    except StageError as exc:
        raise CliError(str(exc), exc.exit_code) from exc
    m = result.summary["metrics"]
    print(f"accuracy {m['accuracy']:.4f}  precision {m['precision']:.4f}  "
          f"recall {m['recall']:.4f}  f1 {m['f1']:.4f}")
    print(f"summary: {Path(args.out) / 'summary.json'}")
    return EXIT_OK


def cmd_train_original(args) -> int:
    try:
        cfg = TrainConfig(args.epochs, args.batch_size, args.seed, OptimizerConfig("adam", args.lr))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    data = _stage("generate_dataset", lambda: generate_dataset(args.seed, args.n_per_class))
    trace = _stage("train_original", lambda: train_original(data, args.out, cfg))
    print(f"final loss {trace.losses[-1]:.6f}; {len(trace.checkpoints)} checkpoints in {args.out}")
    return EXIT_OK


def cmd_dataset(args) -> int:
    def build():
        trace = load_trace(args.trace)
        plan = json.loads(Path(args.plan).read_text())
        ds = fmcs_dataset.build_fmcs_dataset(trace, plan["markers"], dataset_for_trace(trace), plan_info=plan)
        fmcs_dataset.split(ds, args.split_seed)
        return fmcs_dataset.save(ds, args.out)

    manifest = _stage("build_fmcs_dataset", build)
    print(f"{manifest['count']} samples, per label {manifest['per_label_counts']}; {args.out}")
    return EXIT_OK


def cmd_train_fmce(args) -> int:
    try:
        cfg = FmceTrainConfig(args.fmce_epochs, args.fmce_batch_size, args.seed,
                              OptimizerConfig("adam", args.fmce_lr), not args.no_normalise)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc

    def train():
        ds = fmcs_dataset.load(args.dataset)
        model, losses = train_fmce(ds, cfg)
        model.save(args.out, {"train": cfg.to_dict(), "dataset_hash": fmcs_dataset.content_hash(
            Path(args.dataset).read_bytes())})
        if losses:
            write_loss_csv(Path(args.out).with_suffix(".loss.csv"), losses)
        return losses

    losses = _stage("train_fmce", train)
    if losses:
        print(f"final training loss {losses[-1]:.6f}")
    return EXIT_OK


def cmd_eval_fmce(args) -> int:
    def run():
        ds = fmcs_dataset.load(args.dataset)
        model = FmceModel.load(args.model)
        idx = {"test": None, "train": ds.train_idx, "all": np.arange(len(ds))}[args.split]
        return evaluate(model, ds, idx)

    metrics = _stage("evaluate", run)
    _emit(metrics.to_dict(), args.out)
    if args.out and not args.no_figures:
        from .plotting import plot_confusion

        plot_confusion(metrics.confusion, Path(args.out).with_suffix(".png"))
    return EXIT_OK


def cmd_gradcam(args) -> int:
    def run():
        ds = fmcs_dataset.load(args.dataset)
        model = FmceModel.load(args.model)
        targets = None if args.target is None else [args.target] * len(args.indices)
        return gradcam_samples(model, ds, Path(args.out), args.indices, not args.no_figures, targets)

    index = _stage("grad_cam", run)
    for e in index["samples"]:
        print(Path(args.out) / e["pgm"])
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.print_config:
        sys.stdout.write(dumps_json(config_snapshot(args)))
        return EXIT_OK
    try:
        with deterministic_blas():
            return args.func(args)
    except CliError as exc:
        print(f"fmce {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
