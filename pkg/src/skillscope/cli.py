"""Command-line pipeline: synthesize or ingest a cohort, extract features,
test significance, cross-validate, train/evaluate models, render heatmaps.

Stages communicate only via files (manifest, feature CSV, model JSON), and
every run writes its resolved configuration next to its outputs. Exit
codes: 0 success, 2 usage, 3 IO/parse, 4 data shape, 5 schema.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_text, ensure_dir, fmt_g9, read_text
from .errors import SkillscopeError
from .features import (
    FeatureDataset,
    WindowSpec,
    extract_cohort_features,
    read_dataset,
    write_dataset,
)
from .heatmap import (
    DEFAULT_BANDWIDTH_CELLS,
    DEFAULT_BINS,
    DEFAULT_LEVELS,
    gaussian_smooth,
    hdr_thresholds,
    histogram2d,
    region_cell_count,
    valid_gaze_points,
    write_heatmap,
)
from .stats import (
    DEFAULT_ALPHA,
    format_p_value,
    significance_table,
    significance_to_csv,
)
from .synthgen import CohortSpec
from .telemetry import DEFAULT_TICK_MS, BinaryLabel, load_cohort
from .trees import (
    TreeParams,
    balance_by_sampling,
    default_grid,
    deserialize_model,
    evaluate,
    feature_importances,
    lopo_cv,
    predict_proba,
    report_to_csv,
    serialize_model,
    train,
)

FINAL_MODEL_KEY = 2**32  # spawn key clear of any fold index


def _positive_int(value: str) -> int:
    n = int(value)
    if n <= 0:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")
    return n


def _int_in_range(lo: int, hi: int):
    def parse(value: str) -> int:
        n = int(value)
        if not lo <= n <= hi:
            raise argparse.ArgumentTypeError(
                f"{n} outside allowed range [{lo}, {hi}]")
        return n
    return parse


def _counts(value: str):
    from .synthgen import DEFAULT_COUNTS
    from .telemetry import ClassLabel
    parts = value.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            "counts must be four comma-separated integers: PRO,HIGH_AMATEUR,"
            "LOW_AMATEUR,NEWBIE")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad counts {value!r}") from None
    if any(n < 0 for n in nums):
        raise argparse.ArgumentTypeError("counts must be nonnegative")
    order = (ClassLabel.PRO, ClassLabel.HIGH_AMATEUR,
             ClassLabel.LOW_AMATEUR, ClassLabel.NEWBIE)
    return dict(zip(order, nums))


def _levels(value: str) -> tuple[float, ...]:
    try:
        levels = tuple(float(p) for p in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad levels {value!r}") from None
    if not levels or any(not 0.0 < p <= 1.0 for p in levels):
        raise argparse.ArgumentTypeError("levels must lie in (0, 1]")
    return levels


def _resolution(value: str) -> tuple[int, int]:
    parts = value.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("resolution must look like 1920x1080")
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad resolution {value!r}") from None
    if w <= 0 or h <= 0:
        raise argparse.ArgumentTypeError("resolution must be positive")
    return w, h


def _write_run_config(args: argparse.Namespace) -> None:
    resolved = {}
    for key, val in sorted(vars(args).items()):
        if key in ("func", "quiet"):
            continue
        if isinstance(val, Path):
            val = str(val)
        elif isinstance(val, dict):
            val = {getattr(k, "value", str(k)): v for k, v in val.items()}
        elif isinstance(val, tuple):
            val = list(val)
        resolved[key] = val
    resolved["version"] = __version__
    out = ensure_dir(args.out_dir)
    atomic_write_text(out / "run_config.json",
                      json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _say(args: argparse.Namespace, message: str) -> None:
    if not args.quiet:
        print(message)


def _window_spec(args: argparse.Namespace) -> WindowSpec:
    return WindowSpec(width_s=args.width_s, step_s=args.step_s,
                      min_gaze_coverage=args.min_gaze_coverage)


def cmd_synth(args) -> int:
    from .synthgen import generate_cohort
    spec = CohortSpec(counts=args.counts, duration_s=args.duration_s,
                      seed=args.seed)
    _write_run_config(args)
    cohort = generate_cohort(spec, args.out_dir)
    _say(args, f"wrote {len(cohort.player_ids)} sessions and "
               f"{cohort.manifest_path}")
    return 0


def cmd_features(args) -> int:
    _write_run_config(args)
    timelines = load_cohort(args.manifest, tick_ms=args.tick_ms,
                            resolution=args.resolution)
    dataset = extract_cohort_features(timelines, _window_spec(args))
    out = ensure_dir(args.out_dir)
    write_dataset(dataset, out / "features.csv")
    n_pro = int(dataset.is_pro().sum())
    _say(args, f"{len(dataset)} valid samples ({n_pro} PRO, "
               f"{len(dataset) - n_pro} NONPRO) -> {out / 'features.csv'}")
    warn = sum(t.warnings for t in timelines)
    if warn:
        _say(args, f"note: {warn} unmatched input transitions ignored")
    return 0


def cmd_stats(args) -> int:
    _write_run_config(args)
    dataset = read_dataset(args.features)
    spec = WindowSpec(width_s=args.width_s, step_s=args.width_s)
    table = significance_table(dataset, spec, alpha=args.alpha)
    out = ensure_dir(args.out_dir)
    atomic_write_text(out / "significance.csv", significance_to_csv(table))
    if not args.quiet:
        print(f"{'feature':24s} {'U':>10s} {'p':>8s}  significant"
              f" (alpha={args.alpha:g})")
        for t in table.tests:
            mark = "*" if t.significant else ""
            print(f"{t.feature:24s} {t.result.u_statistic:10.1f} "
                  f"{format_p_value(t.result.p_value):>8s}  {mark}")
        print(f"n_pro={table.n_pro} n_nonpro={table.n_nonpro}")
    return 0


def _fit_balanced(dataset: FeatureDataset, params: TreeParams, seed: int):
    """Balance the dataset then train the final model."""
    rows = balance_by_sampling(
        dataset.rows,
        int(np.random.SeedSequence(entropy=seed, spawn_key=(FINAL_MODEL_KEY,))
            .generate_state(1, np.uint64)[0]))
    balanced = FeatureDataset(rows, dataset.feature_names)
    return train(balanced, replace(params, seed=seed))


def _print_report(report) -> None:
    print(f"{'':8s} {'precision':>9s} {'recall':>7s} {'f1':>6s} "
          f"{'roc_auc':>8s} {'accuracy':>9s}")
    print(f"{'NONPRO':8s} {report.precision_nonpro:9.3f} "
          f"{report.recall_nonpro:7.3f} {report.f1_nonpro:6.3f} "
          f"{report.roc_auc:8.3f} {report.accuracy:9.3f}")
    print(f"{'PRO':8s} {report.precision_pro:9.3f} "
          f"{report.recall_pro:7.3f} {report.f1_pro:6.3f}")
    print()
    print(f"{'':8s} {'pred_nonpro':>12s} {'pred_pro':>9s} {'support':>8s}")
    print(f"{'NONPRO':8s} {report.tn:12d} {report.fp:9d} "
          f"{report.support_nonpro:8d}")
    print(f"{'PRO':8s} {report.fn:12d} {report.tp:9d} "
          f"{report.support_pro:8d}")


def cmd_cv(args) -> int:
    _write_run_config(args)
    dataset = read_dataset(args.features)
    grid = default_grid(k_attributes=args.k_attributes)
    result = lopo_cv(dataset, grid, seed=args.seed, threshold=args.threshold)
    out = ensure_dir(args.out_dir)

    best = result.best_params
    atomic_write_text(out / "best_params.json", json.dumps({
        "n_trees": best.n_trees, "max_depth": best.max_depth,
        "bootstrap": best.bootstrap, "k_attributes": best.k_attributes,
        "min_split": best.min_split, "seed": best.seed,
        "oof_accuracy": result.best_accuracy,
    }, indent=2, sort_keys=True) + "\n")

    lines = ["player_id,window_start_s,label,probability"]
    for row, p in zip(dataset.rows, result.oof_probabilities):
        lines.append(f"{row.player_id},{fmt_g9(row.window_start_s)},"
                     f"{row.label.value},{fmt_g9(p)}")
    atomic_write_text(out / "oof.csv", "\n".join(lines) + "\n")

    lines = ["n_trees,max_depth,bootstrap,k_attributes,accuracy"]
    for params, acc in result.accuracies:
        lines.append(f"{params.n_trees},{params.max_depth},"
                     f"{str(params.bootstrap).lower()},{params.k_attributes},"
                     f"{fmt_g9(acc)}")
    atomic_write_text(out / "grid_accuracy.csv", "\n".join(lines) + "\n")

    model = _fit_balanced(dataset, best, args.seed)
    atomic_write_text(out / "model.json", serialize_model(model))
    importances = feature_importances(model)
    report = evaluate([r.label for r in dataset.rows],
                      result.oof_probabilities, threshold=args.threshold,
                      importances=importances)
    atomic_write_text(out / "report.csv",
                      report_to_csv(report, dataset.feature_names))
    if not args.quiet:
        print(f"best: n_trees={best.n_trees} max_depth={best.max_depth} "
              f"bootstrap={str(best.bootstrap).lower()} "
              f"oof_accuracy={result.best_accuracy:.3f}")
        _print_report(report)
    return 0


def cmd_train(args) -> int:
    _write_run_config(args)
    dataset = read_dataset(args.features)
    params = TreeParams(n_trees=args.n_trees, max_depth=args.max_depth,
                        bootstrap=args.bootstrap,
                        k_attributes=args.k_attributes,
                        min_split=args.min_split, seed=args.seed)
    model = _fit_balanced(dataset, params, args.seed)
    out = ensure_dir(args.out_dir)
    atomic_write_text(out / "model.json", serialize_model(model))
    _say(args, f"trained {model.n_trees} trees "
               f"({model.node_feature.size} nodes) -> {out / 'model.json'}")
    return 0


def cmd_eval(args) -> int:
    _write_run_config(args)
    dataset = read_dataset(args.features)
    model = deserialize_model(read_text(args.model))
    probs = predict_proba(model, dataset.matrix())
    report = evaluate([r.label for r in dataset.rows], probs,
                      threshold=args.threshold)
    out = ensure_dir(args.out_dir)
    atomic_write_text(out / "report.csv",
                      report_to_csv(report, dataset.feature_names))
    if not args.quiet:
        _print_report(report)
    return 0


def cmd_heatmap(args) -> int:
    _write_run_config(args)
    timelines = load_cohort(args.manifest, tick_ms=args.tick_ms,
                            resolution=args.resolution)
    groups: dict[str, list] = {}
    if args.by == "class":
        for tl in timelines:
            groups.setdefault(tl.meta.binary_label.value, []).append(tl)
    else:
        for tl in timelines:
            groups.setdefault(tl.meta.player_id, []).append(tl)
    out = ensure_dir(args.out_dir)
    for name, members in groups.items():
        xs = []
        ys = []
        for tl in members:
            x, y = valid_gaze_points(tl)
            xs.append(x)
            ys.append(y)
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        grid = gaussian_smooth(histogram2d(x, y, args.bins, args.bins),
                               args.bandwidth)
        thresholds = hdr_thresholds(grid, args.levels)
        write_heatmap(grid, thresholds, out / f"{name}.pgm",
                      out / f"{name}_density.csv")
        cells = ", ".join(
            f"{p:g}:{region_cell_count(grid, t)}"
            for p, t in zip(args.levels, thresholds))
        _say(args, f"{name}: {x.size} gaze points, HDR cells {cells}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skillscope",
        description="Esports telemetry analytics: timelines, biometric "
                    "features, significance tests, skill models, heatmaps.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--out-dir", type=Path, required=True,
                       help="directory for outputs and run_config.json")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--quiet", action="store_true")

    def windowing(p):
        p.add_argument("--width-s", type=float, default=300.0)
        p.add_argument("--step-s", type=float, default=30.0)
        p.add_argument("--min-gaze-coverage", type=float, default=0.5)

    def ingest(p):
        p.add_argument("--manifest", type=Path, required=True)
        p.add_argument("--tick-ms", type=_positive_int, default=DEFAULT_TICK_MS)
        p.add_argument("--resolution", type=_resolution, default=None,
                       help="declare pixel-space gaze logs, e.g. 1920x1080")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    common(p)
    p.add_argument("--counts", type=_counts,
                   default=_counts("4,11,7,6"),
                   help="players per class: PRO,HIGH_AMATEUR,LOW_AMATEUR,NEWBIE")
    p.add_argument("--duration-s", type=float, default=1800.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract windowed features")
    common(p)
    ingest(p)
    windowing(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("stats", help="feature significance tests")
    common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--width-s", type=float, default=300.0,
                   help="window width used for non-overlap subsampling")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("cv", help="leave-one-player-out grid search")
    common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--k-attributes", type=_int_in_range(1, 9), default=1)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--n-trees", type=_int_in_range(10, 1000), default=500)
    p.add_argument("--max-depth", type=_int_in_range(1, 8), default=1)
    boot = p.add_mutually_exclusive_group()
    boot.add_argument("--bootstrap", dest="bootstrap", action="store_true")
    boot.add_argument("--no-bootstrap", dest="bootstrap", action="store_false")
    p.set_defaults(bootstrap=True)
    p.add_argument("--k-attributes", type=_int_in_range(1, 9), default=1)
    p.add_argument("--min-split", type=_int_in_range(2, 10**9), default=2)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a feature CSV against a model")
    common(p)
    p.add_argument("--features", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("heatmap", help="render gaze heatmaps")
    common(p)
    ingest(p)
    p.add_argument("--by", choices=("class", "player"), default="class")
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS)
    p.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH_CELLS)
    p.add_argument("--levels", type=_levels, default=DEFAULT_LEVELS)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SkillscopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
