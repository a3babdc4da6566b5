"""Command-line entry point: ``deskewfuse {simulate,run,eval,report}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from .config import PipelineConfig, defaults_json, load_config
from .errors import ConfigError, DataError, DeskewError

log = logging.getLogger("deskewfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="random seed (overrides the config file)")
    p.add_argument("--config", type=Path, default=None, help="pipeline configuration (JSON)")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--mode", choices=("fused", "lidar_only"), default=None, help="velocity source for tracking")
    p.add_argument("--quiet", action="store_true", help="only print warnings and errors")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="deskewfuse", description=__doc__)
    parser.add_argument("--print-defaults", action="store_true", help="print the default pipeline configuration and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    p.add_argument("scenario", help="radial | tangential | turning | rotating_lidar | two_objects | custom:<file>")
    p.add_argument("out_dir", nargs="?", type=Path, help="dataset directory (or --out)")
    p.add_argument("--noiseless", action="store_true", help="switch off range, pixel and outlier noise")

    p = sub.add_parser("run", parents=[common], help="estimate velocities, track and correct a dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("out_dir", nargs="?", type=Path, help="run directory (or --out)")

    p = sub.add_parser("eval", parents=[common], help="score a run against the dataset ground truth")
    p.add_argument("dataset", type=Path)
    p.add_argument("run_dir", type=Path)

    p = sub.add_parser("report", parents=[common], help="side-by-side table of metrics files")
    p.add_argument("metrics", nargs="+", type=Path)
    p.add_argument("--labels", nargs="+", default=None, help="column labels (default: file paths)")
    return parser


def _pipeline_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.mode:
        cfg.mode = args.mode
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg.validate()


def _out(args, positional):
    out = positional or args.out
    if out is None:
        raise ConfigError("an output directory is required (positional or --out)")
    return out


def cmd_simulate(args) -> None:
    from .dataset import export_dataset
    from .scenarios import generate_dataset, load_scenario

    sc = load_scenario(args.scenario)
    if args.noiseless:
        sc = sc.noiseless()
    out = _out(args, args.out_dir)
    ds = generate_dataset(sc, seed=args.seed if args.seed is not None else 0)
    export_dataset(ds, out)
    log.info("wrote %d frames of scenario %s to %s", len(ds.frames), sc.name, out)


def cmd_run(args) -> None:
    from .dataset import load_dataset
    from .pipeline import run_pipeline, write_run

    cfg = _pipeline_config(args)
    out = _out(args, args.out_dir)
    ds = load_dataset(args.dataset)
    result = run_pipeline(ds, cfg)
    write_run(result, args.dataset, out, cfg)
    for note in result.notes:
        log.warning(note)
    log.info("%s run: %d track rows over %d frames written to %s", cfg.mode, len(result.track_rows), len(ds.frames), out)


def cmd_eval(args) -> None:
    from .scoring import evaluate_dirs

    sigma = window = None
    if args.config:
        cfg = load_config(args.config)
        sigma, window = cfg.crispness_sigma, cfg.crispness_window
    metrics = evaluate_dirs(args.dataset, args.run_dir, sigma, window)
    out = args.out or args.run_dir
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write metrics to {out}: {exc}") from exc
    for oid, e in metrics["objects"].items():
        log.info(
            "object %s: crispness %s -> %s, track velocity RMSE %.3f m/s, ids %s",
            oid, _fmt(e["crispness_uncorrected"]), _fmt(e["crispness_corrected"]), e["track_velocity"]["rmse"], e["track_ids"],
        )


def _fmt(x):
    return "-" if x is None else f"{x:.3f}"


def cmd_report(args) -> None:
    from .scoring import comparison_table, format_text, load_metrics

    metrics = [load_metrics(p) for p in args.metrics]
    labels = args.labels or [str(p) for p in args.metrics]
    if len(labels) != len(metrics):
        raise ConfigError("--labels must name every metrics file")
    table = comparison_table(metrics, labels)
    text = format_text(table)
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(table)
    if args.out:
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "report.txt").write_text(text, encoding="utf-8")
            (args.out / "report.csv").write_text(buf.getvalue(), encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot write report to {args.out}: {exc}") from exc
    if not args.quiet:
        sys.stdout.write(text)


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "eval": cmd_eval, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(defaults_json() + "\n")
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s: %(message)s", force=True)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except DataError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    except (DeskewError, AssertionError) as exc:
        log.error("internal invariant violated: %s", exc)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
