"""
Command-line front end: train-probes, fit, evaluate, compare, theory, demo, inspect.

Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numeric failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from pydantic import ValidationError

from .analysis.metrics import METRIC_REGISTRY, evaluate, read_collection, write_bins_csv, write_report
from .analysis.stats import compare_collections
from .analysis.theory import TASK_REGISTRY, dominance_experiment, get_task
from .core.calibrators import LatesCalibrator, TemperatureCalibrator, load_calibrator, save_calibrator
from .core.config import AggTrainConfig, ProbeTrainConfig, SplitSpec, default_jobs, default_log_level, default_seed
from .core.dataio import DUMP_MAGIC, ActivationDump, read_dump, read_manifest, split_holdout
from .core.errors import DataError, InvariantError, LatesError, NumericError, UsageError
from .core.fileio import atomic_write_text
from .core.interfaces import PipelineParams
from .core.pipeline import DEMO_AGG_EPOCHS, DEMO_NOISE, create_default_pipeline
from .core.probes import BUNDLE_MAGIC, probe_accuracy_curve, read_probe_bundle, train_probes, write_probe_bundle
from .core.stack import LogitStack, build_logit_stack
from .refnet.tasks import SHIFT_SEVERITIES

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class LatesArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting so run() can map it to exit code 1."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _stack_for(dump: ActivationDump, probes_path: Optional[Path]) -> LogitStack:
    if probes_path is None:
        final = dump.final_logits
        if final is None:
            raise InvariantError("dump has no final-logits block")
        return LogitStack.from_logits(final.data)
    return build_logit_stack(read_probe_bundle(probes_path), dump)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2))


def cmd_train_probes(args: argparse.Namespace) -> int:
    dump = read_dump(_existing_file(args.dump))
    config = ProbeTrainConfig(
        learning_rate=args.lr,
        momentum=args.momentum,
        epochs=args.epochs,
        batch_size=args.batch_size,
        pool_dim=args.pool_dim,
        weight_decay=args.weight_decay,
        seed=args.seed,
    )
    probes = train_probes(dump, config, jobs=args.jobs)
    write_probe_bundle(probes, args.out)
    curve = probe_accuracy_curve(probes, dump)
    _print_json({"probes": str(args.out), "train_accuracy": curve})
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    dump = read_dump(_existing_file(args.dump))
    if args.holdout_fraction is not None:
        spec = SplitSpec(
            train_fraction=1.0 - args.holdout_fraction,
            holdout_fraction=args.holdout_fraction,
            seed=args.seed,
            stratify=args.stratify,
        )
        _, dump = split_holdout(dump, spec)
    elif args.stratify:
        raise UsageError("--stratify only applies when --holdout-fraction carves the holdout out of --dump")
    probes_path = _existing_file(args.probes) if args.probes else None
    if args.method == "lates":
        if probes_path is None:
            raise UsageError("fit --method lates needs --probes")
        config = AggTrainConfig(
            learning_rate=args.lr,
            epochs=args.epochs,
            batch_size=args.batch_size,
            momentum=args.momentum,
            ridge=args.ridge,
            patience=args.patience,
            loss_kind=args.loss,
            init=args.init,
            seed=args.seed,
        )
        calibrator = LatesCalibrator.fit(_stack_for(dump, probes_path), dump.labels, config)
        summary = {"kind": "lates", "beta": calibrator.weights.beta.tolist()}
    else:
        calibrator = TemperatureCalibrator.fit(_stack_for(dump, None), dump.labels, args.loss)
        summary = {"kind": "temperature", "tau": calibrator.model.tau}
    save_calibrator(calibrator, args.out)
    _print_json({**summary, "out": str(args.out)})
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    dump = read_dump(_existing_file(args.dump))
    if args.calibrator:
        calibrator = load_calibrator(_existing_file(args.calibrator))
        probes_path = _existing_file(args.probes) if args.probes else None
        if calibrator.kind == "lates" and probes_path is None:
            raise UsageError("evaluating a lates calibrator needs --probes")
        stack = _stack_for(dump, probes_path if calibrator.kind == "lates" else None)
        probs = calibrator.predict_proba(stack)
    else:
        try:
            probs = np.load(_existing_file(args.probs), allow_pickle=False)
        except (ValueError, OSError) as e:
            raise DataError(f"{args.probs}: not a probability matrix: {e}") from e
    report = evaluate(probs, dump.labels, args.bins, args.auc_mode)
    if args.out:
        write_report(report, args.out)
    if args.bins_csv:
        write_bins_csv(report.bins, args.bins_csv)
    _print_json(report.model_dump(exclude={"bins"}))
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    a = read_collection(_existing_file(args.a))
    b = read_collection(_existing_file(args.b))
    table = compare_collections(a, b, args.metric, test=args.test, sided=args.sided)
    print(table.format())
    if args.out:
        atomic_write_text(args.out, table.model_dump_json(indent=2) + "\n")
    return EXIT_OK


def cmd_theory(args: argparse.Namespace) -> int:
    try:
        task = get_task(args.task)
    except ValueError as e:
        raise UsageError(str(e)) from e
    result = dominance_experiment(
        seeds=args.seeds,
        holdout_n=args.n,
        task=task,
        master_seed=args.seed,
        loss_kind=args.loss,
        ridge_c=args.ridge_c,
        tolerance=args.tolerance,
        jobs=args.jobs,
    )
    bound = result.oracle_bound(rho=args.rho, epsilon=args.epsilon, beta_star_norm_sq=args.beta_norm_sq)
    summary = {
        "task": result.task,
        "seeds": args.seeds,
        "holdout_n": result.holdout_n,
        "lambda": result.ridge,
        "dominance_fraction": result.dominance_fraction,
        "mean_gap": result.mean_gap,
        "gap_interval_95": list(result.gap_interval),
        "mean_eval_gap": result.mean_eval_gap,
        "oracle_delta_bound": bound,
    }
    _print_json(summary)
    if args.out:
        atomic_write_text(args.out, result.model_dump_json(indent=2) + "\n")
    return EXIT_OK


def cmd_demo(args: argparse.Namespace) -> int:
    params: PipelineParams = {
        "task": args.task,
        "n": args.n,
        "n_classes": args.classes,
        "noise": args.noise,
        "seed": args.seed,
        "hidden_widths": args.hidden,
        "refnet_epochs": args.epochs,
        "loss_kind": args.loss,
        "bins": args.bins,
        "auc_mode": args.auc_mode,
        "severities": args.severities,
        "jobs": args.jobs,
        "holdout_fraction": args.holdout_fraction,
        "stratify": args.stratify,
        "agg_init": args.agg_init,
        "agg_epochs": args.agg_epochs,
    }
    result = create_default_pipeline(params).run(args.out_dir)
    _print_json(result.summary.model_dump())
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    path = _existing_file(args.path)
    with open(path, "rb") as handle:
        magic = handle.read(4)
    if magic == BUNDLE_MAGIC:
        probes = read_probe_bundle(path)
        _print_json({
            "format": "probe bundle",
            "version": 1,
            "probes": [
                {
                    "layer_index": p.layer_index,
                    "identity": p.is_identity,
                    "pool_dim": p.pool_spec.output_dim if p.pool_spec else None,
                    "n_classes": p.n_classes,
                    "input_dim": p.input_dim,
                }
                for p in probes
            ],
        })
        return EXIT_OK
    if magic != DUMP_MAGIC:
        raise DataError(f"{path}: unrecognized file (magic {magic!r})")
    dump = read_dump(path)
    manifest = read_manifest(path)
    _print_json({
        "format": "activation dump",
        "version": 1,
        "n_examples": dump.n_examples,
        "n_classes": dump.n_classes,
        "layers": [
            {"layer_index": b.layer_index, "feature_dim": b.feature_dim, "is_final_logits": b.is_final_logits}
            for b in dump.layers
        ],
        "label_counts": np.bincount(dump.labels, minlength=dump.n_classes).tolist(),
        "manifest": manifest.model_dump() if manifest else None,
    })
    return EXIT_OK


def build_parser() -> LatesArgumentParser:
    seed = default_seed()
    jobs = default_jobs()
    fmt = argparse.ArgumentDefaultsHelpFormatter

    parser = LatesArgumentParser(prog="lates", description="Layer-stack temperature scaling toolkit", formatter_class=fmt)
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    parser.add_argument("--quiet", action="store_true", help="log warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=LatesArgumentParser)
    sub.required = True

    p = sub.add_parser("train-probes", help="train one linear probe per layer of a dump", formatter_class=fmt)
    p.add_argument("--dump", required=True, help="training-split activation dump (.lats)")
    p.add_argument("--out", required=True, help="probe bundle to write (.lprb)")
    p.add_argument("--lr", type=float, default=0.01, help="initial learning rate")
    p.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    p.add_argument("--epochs", type=int, default=50, help="training epochs")
    p.add_argument("--batch-size", type=int, default=128, help="mini-batch size")
    p.add_argument("--pool-dim", type=int, default=512, help="average-pool layers wider than this")
    p.add_argument("--weight-decay", type=float, default=0.0, help="l2 penalty on probe weights")
    p.add_argument("--seed", type=int, default=seed, help="random seed (LATES_SEED)")
    p.add_argument("--jobs", type=int, default=jobs, help="probes trained in parallel (LATES_JOBS)")
    p.set_defaults(handler=cmd_train_probes)

    p = sub.add_parser("fit", help="fit a LATES or temperature calibrator on a holdout dump", formatter_class=fmt)
    p.add_argument("--method", choices=["lates", "temperature"], default="lates", help="calibrator to fit")
    p.add_argument("--dump", "--holdout", dest="dump", required=True, help="holdout-split activation dump (.lats)")
    p.add_argument("--probes", default=None, help="probe bundle (required for lates)")
    p.add_argument("--loss", choices=["nll", "square"], default="nll", help="proper loss minimized on the holdout")
    p.add_argument("--out", required=True, help="calibrator JSON to write")
    p.add_argument("--lr", type=float, default=0.005, help="aggregator learning rate")
    p.add_argument("--epochs", type=int, default=50, help="aggregator epochs")
    p.add_argument("--batch-size", type=int, default=0, help="aggregator mini-batch size, 0 for the full holdout")
    p.add_argument("--momentum", type=float, default=0.0, help="aggregator momentum")
    p.add_argument("--ridge", type=float, default=0.0, help="ridge penalty (lambda/2)|beta|^2")
    p.add_argument("--patience", type=int, default=None, help="early-stopping patience in epochs")
    p.add_argument("--init", choices=["identity", "temperature"], default="identity",
                   help="aggregator start: the model's own logits or the fitted temperature")
    p.add_argument("--holdout-fraction", type=float, default=None,
                   help="fit on a random holdout of this share of --dump instead of the whole dump")
    p.add_argument("--stratify", action="store_true", help="draw the --holdout-fraction split per class")
    p.add_argument("--seed", type=int, default=seed, help="random seed (LATES_SEED)")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("evaluate", help="compute ECE, NLL, Brier, accuracy and AUROC", formatter_class=fmt)
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--calibrator", default=None, help="calibrator JSON from `lates fit`")
    source.add_argument("--probs", default=None, help="n x K probability matrix (.npy)")
    p.add_argument("--dump", required=True, help="activation dump supplying labels (and logits)")
    p.add_argument("--probes", default=None, help="probe bundle (needed for lates calibrators)")
    p.add_argument("--bins", type=int, default=10, help="equal-width ECE bins")
    p.add_argument("--auc-mode", choices=["correctness", "ovr"], default="correctness", help="AUROC variant")
    p.add_argument("--out", default=None, help="report JSON to write")
    p.add_argument("--bins-csv", default=None, help="reliability-bin CSV to write")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("compare", help="significance tests between two report files", formatter_class=fmt)
    p.add_argument("--a", required=True, help="reports of method A (e.g. reports_lates.json)")
    p.add_argument("--b", required=True, help="reports of method B, the baseline")
    p.add_argument("--test", choices=["wilcoxon", "anova"], default="wilcoxon", help="significance test")
    p.add_argument("--metric", nargs="+", choices=sorted(METRIC_REGISTRY), default=list(METRIC_REGISTRY),
                   help="metrics to compare; p-values are Holm-adjusted across them")
    p.add_argument("--sided", choices=["two", "one"], default="two", help="Wilcoxon sidedness")
    p.add_argument("--out", default=None, help="comparison JSON to write")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("theory", help="dominance experiment on synthetic logit stacks", formatter_class=fmt)
    p.add_argument("--seeds", type=int, default=40, help="independent holdout samples")
    p.add_argument("--n", type=int, default=1000, help="holdout size per seed")
    p.add_argument("--task", default="default", help=f"synthetic task: {', '.join(sorted(TASK_REGISTRY))}")
    p.add_argument("--loss", choices=["nll", "square"], default="nll", help="proper loss")
    p.add_argument("--ridge-c", type=float, default=1.0, help="ridge lambda = c / sqrt(n)")
    p.add_argument("--tolerance", type=float, default=0.01, help="LATES may trail TS by this much and still dominate")
    p.add_argument("--rho", type=float, default=1.0, help="Lipschitz constant in the oracle bound")
    p.add_argument("--epsilon", type=float, default=0.05, help="margin in the oracle bound")
    p.add_argument("--beta-norm-sq", type=float, default=None,
                   help="|beta*|^2 in the oracle bound (default: mean fitted |beta|^2)")
    p.add_argument("--seed", type=int, default=seed, help="master seed (LATES_SEED)")
    p.add_argument("--jobs", type=int, default=jobs, help="seeds run in parallel (LATES_JOBS)")
    p.add_argument("--out", default=None, help="full per-seed result JSON to write")
    p.set_defaults(handler=cmd_theory)

    p = sub.add_parser("demo", help="end-to-end run on a synthetic task", formatter_class=fmt)
    p.add_argument("--task", choices=["spiral", "gaussian_mixture"], default="spiral", help="synthetic task")
    p.add_argument("--n", type=int, default=5000, help="examples for network training plus holdout")
    p.add_argument("--classes", type=int, default=3, help="number of classes")
    p.add_argument("--noise", type=float, default=DEMO_NOISE, help="task noise level")
    p.add_argument("--hidden", type=int, nargs="+", default=[32, 32, 32], help="hidden layer widths")
    p.add_argument("--epochs", type=int, default=200, help="reference network epochs")
    p.add_argument("--loss", choices=["nll", "square"], default="nll", help="calibration loss")
    p.add_argument("--bins", type=int, default=10, help="equal-width ECE bins")
    p.add_argument("--auc-mode", choices=["correctness", "ovr"], default="correctness", help="AUROC variant")
    p.add_argument("--severities", type=int, nargs="*", default=list(range(1, len(SHIFT_SEVERITIES) + 1)),
                   help="feature-shift severity levels evaluated on the test set")
    p.add_argument("--holdout-fraction", type=float, default=0.1, help="share of examples held out for calibration")
    p.add_argument("--stratify", action="store_true", help="split train and holdout per class")
    p.add_argument("--agg-init", choices=["identity", "temperature"], default="temperature",
                   help="aggregator start: the model's own logits or the fitted temperature")
    p.add_argument("--agg-epochs", type=int, default=DEMO_AGG_EPOCHS, help="full-batch aggregator epochs")
    p.add_argument("--seed", type=int, default=seed, help="random seed (LATES_SEED)")
    p.add_argument("--jobs", type=int, default=jobs, help="probes trained in parallel (LATES_JOBS)")
    p.add_argument("--out-dir", default="runs/demo", help="directory for dumps, probes, calibrators and reports")
    p.set_defaults(handler=cmd_demo)

    p = sub.add_parser("inspect", help="print the header of a dump or probe bundle", formatter_class=fmt)
    p.add_argument("path", help="a .lats dump or .lprb probe bundle")
    p.set_defaults(handler=cmd_inspect)
    return parser


def _configure_logging(args: Optional[argparse.Namespace]) -> None:
    level = default_log_level()
    if args is not None and getattr(args, "verbose", False):
        level = "DEBUG"
    elif args is not None and getattr(args, "quiet", False):
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help
        return int(e.code or 0)

    _configure_logging(args)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as e:
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"error: numeric failure{'' if e.epoch is None else f' at epoch {e.epoch}'}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (LatesError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
