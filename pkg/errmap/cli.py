"""
Command-line entry points: gen-data, train, predict, eval and ablate.
"""

import argparse
import math
import sys
from typing import List, Optional, Sequence

import yaml

from . import evaluate_model, generate_dataset, predict_case, run_ablation, train_model
from .config.settings import (
    DATA_DIR,
    DESK_CASE_COUNT,
    DESK_CLASSES,
    DESK_DIMS,
    DESK_MASKS_PER_CASE,
    LOGS_DIR,
    SEVERITY_LEVELS,
)
from .data.data_organizer import manifest_records, seg_dsc_histogram
from .data.phantom import calibrate_severity
from .training.trainer import TrainConfig

PROG = "errmap"
CALIBRATION_SEEDS = 10


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors on one line with exit status 1."""

    def error(self, message: str):
        self.exit(1, f"{PROG}: error: {message}\n")


def _int_list(text: str, count: Optional[int] = None) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")
    if not values or (count is not None and len(values) != count):
        raise argparse.ArgumentTypeError(f"expected {count or 'some'} comma-separated integers, got '{text}'")
    return values


def _dims(text: str) -> List[int]:
    return _int_list(text, 3)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description="Error-map prediction and segmentation quality assessment.")
    parser.add_argument("--log-dir", default=str(LOGS_DIR), help="Directory for the operation log")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    gen = sub.add_parser("gen-data", help="Generate the synthetic dataset")
    gen.add_argument("--out", default=str(DATA_DIR))
    gen.add_argument("--count", type=int, default=DESK_CASE_COUNT)
    gen.add_argument("--dims", type=_dims, default=list(DESK_DIMS), help="dx,dy,dz")
    gen.add_argument("--classes", type=int, default=DESK_CLASSES)
    gen.add_argument("--masks-per-case", type=int, default=DESK_MASKS_PER_CASE)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--workers", type=int, default=1)
    gen.add_argument("--calibrate", action="store_true", help="Also print the severity -> Seg.DSC table")

    train = sub.add_parser("train", help="Train a model")
    train.add_argument("--config", help="YAML training config (defaults when omitted)")
    train.add_argument("--data", required=True)
    train.add_argument("--out", required=True)
    train.add_argument("--resume", help="Checkpoint to resume from")
    train.add_argument("--fold", type=int, help="Override the held-out fold")

    predict = sub.add_parser("predict", help="Predict the error map of one mask")
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--data", default=str(DATA_DIR))
    predict.add_argument("--case", required=True)
    predict.add_argument("--mask-index", type=int, required=True)
    predict.add_argument("--out", required=True)

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint and write a report")
    evaluate.add_argument("--checkpoint", required=True)
    evaluate.add_argument("--data", required=True)
    evaluate.add_argument("--split", choices=["test", "train", "all"], default="test")
    evaluate.add_argument("--report", required=True, help="Report directory")
    evaluate.add_argument("--fold", type=int, default=0)
    evaluate.add_argument("--bins", choices=["ibsr", "acdc"], default="ibsr")

    ablate = sub.add_parser("ablate", help="Compare the full network with its ablation variants")
    ablate.add_argument("--config", help="YAML training config (defaults when omitted)")
    ablate.add_argument("--data", required=True)
    ablate.add_argument("--out", required=True)
    ablate.add_argument("--seeds", type=_int_list, default=[0, 1, 2], help="s1,s2,s3")
    ablate.add_argument("--fold", type=int, help="Override the held-out fold")
    return parser


def _load_config(path: Optional[str], fold: Optional[int]) -> TrainConfig:
    config = TrainConfig.from_yaml(path) if path else TrainConfig()
    if fold is not None:
        config.fold = fold
        config.validate()
    return config


def _fmt(value: float) -> str:
    return "nan" if value is None or math.isnan(value) else f"{value:.4f}"


def _cmd_gen_data(args) -> None:
    manifest = generate_dataset(
        out_dir=args.out,
        count=args.count,
        dims=args.dims,
        num_classes=args.classes,
        masks_per_case=args.masks_per_case,
        seed=args.seed,
        log_dir=args.log_dir,
        show_progress=not args.quiet,
        max_workers=args.workers,
    )
    records = manifest_records(manifest)
    print(f"Wrote {len(manifest['cases'])} cases, {len(records)} masks to {args.out}")
    print("Seg.DSC histogram:")
    histogram = seg_dsc_histogram(records["seg_dsc"])
    for label, count in zip(histogram["bin"], histogram["count"]):
        print(f"  {label:>12} {count}")
    if args.calibrate:
        table = calibrate_severity(
            SEVERITY_LEVELS, range(args.seed, args.seed + CALIBRATION_SEEDS), args.dims, args.classes
        )
        print("Severity calibration:")
        print(table.to_string(index=False))


def _cmd_train(args) -> None:
    config = _load_config(args.config, args.fold)
    result = train_model(
        config, args.data, args.out, resume=args.resume, log_dir=args.log_dir, show_progress=not args.quiet
    )
    print(f"Trained {result.iterations} iterations; final checkpoint {result.checkpoint_path}")


def _cmd_predict(args) -> None:
    result = predict_case(args.checkpoint, args.data, args.case, args.mask_index, args.out, log_dir=args.log_dir)
    print(f"pAcc={_fmt(result['p_acc'])} cER={_fmt(result['c_er'])} rER={_fmt(result['r_er'])}")
    print(f"Predicted error map: {result['pred_path']}")


def _cmd_eval(args) -> None:
    report = evaluate_model(
        args.checkpoint,
        args.data,
        args.report,
        split=args.split,
        fold=args.fold,
        bins=args.bins,
        log_dir=args.log_dir,
        show_progress=not args.quiet,
    )
    overall = report.overall
    print(
        f"{overall['count']} records: DSC={_fmt(overall['dsc'])} Acc={_fmt(overall['acc'])} "
        f"Prec={_fmt(overall['prec'])} Recl={_fmt(overall['recl'])}"
    )
    corr = report.correlation
    if corr:
        print(f"PCC_a={_fmt(corr['pcc_a'])} PCC_d={_fmt(corr['pcc_d'])} MAE={_fmt(corr['mae'])}")


def _cmd_ablate(args) -> None:
    config = _load_config(args.config, args.fold)
    result = run_ablation(config, args.data, args.out, args.seeds, log_dir=args.log_dir, show_progress=not args.quiet)
    print(result["median"].to_string(index=False))
    ordering = result["ordering"]
    if not ordering["holds"]:
        print(f"Median DSC ordering plain <= no_ceu <= full violated: {ordering['effects']}")


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "predict": _cmd_predict,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns the process exit status."""
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, IndexError, RuntimeError, yaml.YAMLError) as e:
        message = " ".join(str(e).split()) or type(e).__name__
        print(f"{PROG}: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
