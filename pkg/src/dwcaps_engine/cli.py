"""
Command line: ``dwcaps {analyze, train, compare, eval, gen-data, plot}``.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
"""

import argparse
import logging
import re
import sys
from pathlib import Path

import pandas as pd

from dwcaps_engine.analysis import count_parameters, kernel_sweep, reduction_claims, sweep_frame, twin_reduction
from dwcaps_engine.core.config.naming import VARIANT_GRAMMAR, parse_sweep_base, parse_variant
from dwcaps_engine.core.config.setup_manager import SetupManager
from dwcaps_engine.core.utils.checkpoint import load_checkpoint
from dwcaps_engine.core.utils.errors import DwcapsError, UsageError
from dwcaps_engine.core.utils.logging_utils import setup_logger
from dwcaps_engine.datasets import FORMATS, generate_synthetic, load_dataset, save_idx, split
from dwcaps_engine.make_model import BuildOptions, build_variant, reference_capsules
from dwcaps_engine.rendering.monitoring import plot_parameter_bars, plot_run, plot_twin_runs
from dwcaps_engine.rendering.text_renderer import (
    render_comparison,
    render_confusion,
    render_cost_table,
    render_frame,
)
from dwcaps_engine.run_model import evaluate, train, twin_kernel_runs
from dwcaps_engine.scores.classification import linear_probe_accuracy

logger = logging.getLogger("dwcaps_engine.cli")

_SYNTHETIC = re.compile(r"^(\d+)x(\d+)$")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser():
    parser = _Parser(prog="dwcaps", description="Capsule networks with depthwise separable convolutions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="Parameter and MAC reports", epilog=f"Variant names: {VARIANT_GRAMMAR}")
    p.add_argument("variant", nargs="?", help="Variant name, e.g. 32-v1-2-2-k3")
    p.add_argument("--sweep", metavar="BASE", nargs="+", help="Kernel sweep of base names, e.g. 32-v1-2-2")
    p.add_argument("--claims", action="store_true", help="Reference DW/SC reductions against their targets")
    p.add_argument("--no-bias", action="store_true", help="Exclude bias terms from the counts")
    p.add_argument("--filters", type=int, default=None, help="Convolution width (reference: 512)")
    p.add_argument("--csv", metavar="PATH", help="Also write the table as CSV")
    p.add_argument("--chart", metavar="SVG", help="With --sweep: bar chart of DW and SC total parameters")

    p = sub.add_parser("train", help="Train a variant", epilog=f"Variant names: {VARIANT_GRAMMAR}")
    p.add_argument("--variant", default=None)
    p.add_argument("--data", metavar="PATH", help="Dataset prefix (raw-idx) or directory (image-dir)")
    p.add_argument("--format", choices=FORMATS, default="raw-idx")
    p.add_argument("--synthetic", metavar="SPEC", help="Synthetic set <classes>x<per_class>, e.g. 3x167")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--config", metavar="YAML", help="Training settings (a vanilla file is written if missing)")
    p.add_argument("--filters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p.add_argument("--subsample", type=float, default=None, help="Fraction of each class kept before splitting")
    p.add_argument("--ratio", type=float, default=None, help="Train fraction of the split")
    p.add_argument("--wallclock", action="store_true", default=None, help="Record epoch seconds in run.csv")

    p = sub.add_parser("compare", help="Train DW and SC twins across kernel sizes",
                       epilog=f"Variant names: {VARIANT_GRAMMAR}")
    p.add_argument("--base", metavar="BASE", required=True, help="Kernel-less base name, e.g. 32-v1-2-2")
    p.add_argument("--kernels", type=int, nargs="+", default=None, help="Subset of the kernel sizes 9 7 5 3")
    p.add_argument("--data", metavar="PATH", help="Dataset prefix (raw-idx) or directory (image-dir)")
    p.add_argument("--format", choices=FORMATS, default="raw-idx")
    p.add_argument("--synthetic", metavar="SPEC", help="Synthetic set <classes>x<per_class>, e.g. 3x167")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", metavar="DIR", required=True)
    p.add_argument("--config", metavar="YAML", help="Training settings (a vanilla file is written if missing)")
    p.add_argument("--filters", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--subsample", type=float, default=None, help="Fraction of each class kept before splitting")

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    p.add_argument("--checkpoint", metavar="PATH", required=True)
    p.add_argument("--data", metavar="PATH", required=True)
    p.add_argument("--format", choices=FORMATS, default="raw-idx")
    p.add_argument("--all", action="store_true", help="Evaluate every item instead of the training run's test split")

    p = sub.add_parser("gen-data", help="Write a synthetic raw-idx dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--size", type=int, choices=(32, 64), default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", metavar="PATH", required=True, help="Output prefix")

    p = sub.add_parser("plot", help="Accuracy-vs-epoch chart of a run")
    p.add_argument("--run", metavar="CSV", required=True)
    p.add_argument("--out", metavar="SVG", required=True)
    return parser


def _analyze(args):
    selected = [x for x in (args.variant, args.sweep, args.claims or None) if x]
    if len(selected) != 1:
        raise UsageError("analyze takes exactly one of VARIANT, --sweep BASE or --claims.")
    if args.chart and not args.sweep:
        raise UsageError("--chart goes with --sweep.")
    with_bias = not args.no_bias
    overrides = {} if args.filters is None else {"filters": args.filters}
    options = BuildOptions.reference(**overrides)
    caps = reference_capsules()

    if args.claims:
        frame = reduction_claims(options, caps, with_bias)
        print(render_frame(frame), end="")
    elif args.sweep:
        frame = pd.concat([sweep_frame(kernel_sweep(base, caps, options, with_bias), caps, options, with_bias)
                           for base in args.sweep], ignore_index=True)
        print(render_frame(frame), end="")
        if args.chart:
            logger.info("Chart written to %s", plot_parameter_bars(frame, args.chart))
    else:
        model = build_variant(parse_variant(args.variant), caps, options, initialize=False)
        report = count_parameters(model, with_bias)
        print(render_cost_table(report, title=model.fullname), end="")
        print(render_comparison(twin_reduction(model.variant, caps, options, with_bias)), end="")
        frame = report.to_frame()
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.csv, index=False)
    return 0


def _parse_synthetic(spec):
    match = _SYNTHETIC.match(spec or "")
    if match is None:
        raise UsageError(f"--synthetic expects <classes>x<per_class>, got {spec!r}.")
    return int(match.group(1)), int(match.group(2))


def _check_data_source(args):
    if bool(args.data) == bool(args.synthetic):
        raise UsageError(f"{args.command} needs exactly one of --data PATH or --synthetic SPEC.")
    return _parse_synthetic(args.synthetic) if args.synthetic else None


def _training_data(args, synthetic, input_size, seed):
    if synthetic:
        classes, per_class = synthetic
        return generate_synthetic(classes, per_class, input_size, seed)
    return load_dataset(args.data, args.format, size=input_size)


def _train(args):
    synthetic = _check_data_source(args)
    cfg = SetupManager(args.config).train_config(
        variant=args.variant, epochs=args.epochs, seed=args.seed, filters=args.filters,
        batch_size=args.batch_size, learning_rate=args.lr, optimizer=args.optimizer,
        subsample_fraction=args.subsample, split_ratio=args.ratio, record_wallclock=args.wallclock,
    )
    variant = parse_variant(cfg.variant)
    setup_logger(level=logging.getLogger("dwcaps_engine").level, log_dir=args.out)

    data = _training_data(args, synthetic, variant.input_size, cfg.seed)
    caps = reference_capsules(**{"num_classes": data.num_classes, **cfg.capsules})
    options = BuildOptions.reference(filters=cfg.filters, seed=cfg.seed, dtype=cfg.dtype)
    model = build_variant(variant, caps, options)
    record = train(model, data, cfg, out_dir=args.out)
    last = record.rows[-1]
    print(f"{variant}: {len(record.rows)} epoch(s), loss {last['train_loss']:.6f}, "
          f"train_acc {last['train_acc']:.4f}, test_acc {last['test_acc']:.4f}")
    print(f"checkpoint sha256 {record.model_checksum}")
    return 0


def _compare(args):
    synthetic = _check_data_source(args)
    cfg = SetupManager(args.config).train_config(
        epochs=args.epochs, seed=args.seed, filters=args.filters, batch_size=args.batch_size,
        learning_rate=args.lr, subsample_fraction=args.subsample,
    )
    input_size = parse_sweep_base(args.base)[0].input_size
    setup_logger(level=logging.getLogger("dwcaps_engine").level, log_dir=args.out)

    data = _training_data(args, synthetic, input_size, cfg.seed)
    runs = twin_kernel_runs(args.base, data, cfg, kernels=args.kernels, out_dir=args.out)
    chart = plot_twin_runs(runs, Path(args.out) / "twins.svg", title=f"{args.base}: DW vs SC")
    last = runs.groupby("variant", sort=False).tail(1)
    print(render_frame(last[["kernel", "conv_type", "variant", "train_acc", "test_acc"]]), end="")
    logger.info("Chart written to %s", chart)
    return 0


def _eval(args):
    model = load_checkpoint(args.checkpoint)
    data = load_dataset(args.data, args.format, size=model.input_shape[0])
    if not args.all:
        extra = model.checkpoint_extra
        data = split(data, extra.get("split_ratio", 0.7), extra.get("subsample_fraction", 0.5), extra.get("seed", 0))
    print(render_confusion(evaluate(model, data)), end="")
    return 0


def _gen_data(args):
    bundle = generate_synthetic(args.classes, args.per_class, args.size, args.seed)
    images_path, _ = save_idx(bundle, args.out)
    logger.info("Wrote %d items of %d classes to %s", bundle.count, bundle.num_classes, images_path)
    if args.per_class >= 2:
        probe = linear_probe_accuracy(split(bundle, 0.7, 1.0, args.seed))
        logger.info("Linear probe on raw pixels: test accuracy %.4f", probe)
    return 0


def _plot(args):
    out = plot_run(args.run, args.out)
    logger.info("Chart written to %s", out)
    return 0


COMMANDS = {"analyze": _analyze, "train": _train, "compare": _compare, "eval": _eval, "gen-data": _gen_data,
            "plot": _plot}


def main(argv=None):
    setup_logger()
    try:
        args = build_parser().parse_args(argv)
        setup_logger(level=logging.DEBUG if args.verbose else logging.INFO)
        return COMMANDS[args.command](args)
    except UsageError as err:
        logger.error("%s", err)
        return 1
    except (DwcapsError, OSError) as err:
        logger.error("%s", err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
