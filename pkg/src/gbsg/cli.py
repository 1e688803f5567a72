"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (missing/invalid files,
bad config), 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import __version__, pipeline
from .config import PipelineConfig, parse_config
from .errors import GbsgError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="gbsg", description=__doc__)
    p.add_argument("--version", action="version", version=f"gbsg {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True, help="pipeline config file")
        sp.add_argument("--seed", type=int, default=None, help="override pipeline.seed")
        sp.add_argument("--threads", type=int, default=None, help="override pipeline.threads")
        sp.add_argument("--grading-mode", choices=("exact", "patchmatch"), default=None,
                        help="override grading.method")
        return sp

    add("synth", "generate a synthetic cohort and manifest")
    add("grade", "grade every subject of the manifest")
    add("graph", "build per-subject structure graphs from grading maps")
    add("features", "assemble, age-correct, and z-score the feature matrix")
    add("train", "fit elastic-net selection and the classifier(s) on CN/AD")
    add("eval", "classify sMCI vs pMCI and write the report")
    add("run", "run the full pipeline")
    add("report", "print the current report")
    bench = add("bench", "time exact vs patch-match grading")
    bench.add_argument("--compare-backends", action="store_true",
                       help="also time the numba and numpy kernel backends")
    return p


def _load_config(args) -> PipelineConfig:
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.set("pipeline.seed", args.seed)
    if args.threads is not None:
        cfg.set("pipeline.threads", args.threads)
    if getattr(args, "grading_mode", None):
        cfg.set("grading.method", args.grading_mode)
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        cfg = _load_config(args)
        if args.command == "synth":
            manifest = pipeline.stage_synth(cfg)
            print(f"wrote {manifest}")
        elif args.command == "grade":
            gradings = pipeline.stage_grade(cfg)
            print(f"graded {len(gradings)} subjects")
        elif args.command == "graph":
            graphs, canonical = pipeline.stage_graph(cfg)
            print(f"built {len(graphs)} graphs over {len(canonical)} structures")
        elif args.command == "features":
            feats = pipeline.stage_features(cfg)
            print(f"feature matrix: {feats.z.values.shape[0]} x {feats.z.values.shape[1]}")
        elif args.command == "train":
            selection, models = pipeline.stage_train(cfg)
            print(f"selected {selection.n_selected} features; "
                  f"trained {', '.join(sorted(models))}")
        elif args.command == "eval":
            reports = pipeline.stage_eval(cfg)
            for kind, r in sorted(reports.items()):
                print(f"{kind}: ACC {r.acc:.1%} SEN {r.sen:.1%} SPE {r.spe:.1%}")
        elif args.command == "run":
            result = pipeline.run_pipeline(cfg)
            for kind, r in sorted(result.reports.items()):
                print(f"{kind}: ACC {r.acc:.1%} SEN {r.sen:.1%} SPE {r.spe:.1%}")
            print(f"report: {result.report_path}")
        elif args.command == "report":
            with open(cfg.report_path) as f:
                sys.stdout.write(f.read())
        elif args.command == "bench":
            text = pipeline.benchmark_grading(cfg, compare_backends=args.compare_backends)
            sys.stdout.write(text)
        return 0
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except GbsgError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except SystemExit as e:  # argparse --version / --help
        code = e.code if isinstance(e.code, int) else 0
        return code


if __name__ == "__main__":
    sys.exit(main())
