"""Command-line entry point: ``rotd run``, ``rotd plot``, ``rotd presets``."""
from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from . import BACKEND, harness
from .plotting import PLOTTABLE, emit_plot, series_from_columns

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), keeping 2 for I/O."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def preset_names() -> list[str]:
    root = resources.files("rotd") / "presets"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def preset_path(name: str) -> Path:
    return Path(str(resources.files("rotd") / "presets" / f"{name}.cfg"))


def _preset_description(name: str) -> str:
    for line in preset_path(name).read_text().splitlines():
        if line.startswith("#"):
            return line.lstrip("# ").strip()
    return ""


def _resolve_config(arg: str) -> Path:
    path = Path(arg)
    if not path.exists() and arg in preset_names():
        return preset_path(arg)
    return path


def cmd_run(args) -> int:
    cfg = harness.parse_config(_resolve_config(args.config))
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    if args.workers:
        cfg.workers = args.workers
    results = harness.run_experiment(cfg)
    written = harness.write_outputs(cfg, results)
    n_div = sum(r.diverged for r in results)
    print(f"experiment {cfg.experiment}: {len(results)} runs ({n_div} diverged), backend {BACKEND}")
    for label, group in harness.group_by_label(results).items():
        ok = [r for r in group if not r.diverged]
        if ok:
            final = sum(r.records[-1].mspbe for r in ok) / len(ok)
            print(f"  {label:<22} final mspbe {final:.6g}  theta_nnz {ok[0].records[-1].theta_nnz}")
        else:
            print(f"  {label:<22} diverged at {[r.diverged_at for r in group]}")
    for name, path in written.items():
        print(f"  wrote {path}")
    if results and n_div == len(results):
        print("all runs diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_plot(args) -> int:
    if args.metric not in PLOTTABLE:
        print(f"unknown metric {args.metric!r}; choose from {', '.join(PLOTTABLE)}", file=sys.stderr)
        return EXIT_CONFIG
    src = Path(args.csv)
    columns = harness.read_trace_csv(src)
    if len(columns.get("iteration", ())) == 0:
        print(f"{src}: no data rows to plot", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else src.with_name(f"{src.stem}_{args.metric}.svg")
    log = {"log": True, "linear": False, "auto": None}[args.scale]
    emit_plot(series_from_columns(columns, args.metric, src.stem), args.metric, out, log_scale=log)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_presets(args) -> int:
    if args.action == "list":
        for name in preset_names():
            print(f"{name:<14} {_preset_description(name)}")
    else:
        if args.name not in preset_names():
            print(f"unknown preset {args.name!r}", file=sys.stderr)
            return EXIT_CONFIG
        sys.stdout.write(preset_path(args.name).read_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rotd", description="Regularized off-policy TD experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser(
        "run",
        help="run an experiment config (file path or preset name)",
        description="Run an experiment and write CSV traces, aggregates, a JSON summary and "
                    f"optional SVG plots. The output directory is taken from ${harness.OUTPUT_ENV} "
                    "when set, else from the config.",
        epilog=harness.config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.add_argument("config")
    run.add_argument("--output-dir", help="override the output directory")
    run.add_argument("--workers", type=int, help="parallel runs (results do not depend on it)")
    run.set_defaults(func=cmd_run)

    plot = sub.add_parser("plot", help="plot a metric from a trace CSV as SVG")
    plot.add_argument("csv")
    plot.add_argument("--metric", required=True, help=", ".join(PLOTTABLE))
    plot.add_argument("--out", help="output SVG path (default: next to the CSV)")
    plot.add_argument("--scale", choices=("auto", "log", "linear"), default="auto")
    plot.set_defaults(func=cmd_plot)

    presets = sub.add_parser("presets", help="list or show bundled experiment configs")
    psub = presets.add_subparsers(dest="action", required=True, parser_class=_Parser)
    psub.add_parser("list")
    show = psub.add_parser("show")
    show.add_argument("name")
    presets.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
