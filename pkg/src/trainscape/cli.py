"""Command-line entry point.

Subcommands mirror the pipeline stages; each ensures its prerequisites, so
e.g. `fit` trains the subject and synthesizes boundary sets first when those
artifacts are absent. Stage failures exit 1 with a structured message;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import PipelineConfig
from .errors import TrainscapeError
from .pipeline import PipelineRun
from .server import DEFAULT_PORT, PORT_ENV_VAR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainscape",
        description="Visualize how a classifier's decision landscape forms over training")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("train-subject", "train (or ingest) the subject classifier checkpoints"),
            ("synthesize", "synthesize per-epoch decision-boundary point sets"),
            ("fit", "fit per-epoch visualization models (and their inputs if absent)"),
            ("evaluate", "compute the preservation metrics report"),
            ("render", "render per-epoch landscape bundles and PNGs"),
            ("run", "run the full pipeline end to end")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to the pipeline config JSON")
        p.add_argument("--force", action="store_true",
                       help="re-run stages even if completion markers exist")

    serve_p = sub.add_parser("serve", help="serve a finished run over HTTP")
    serve_p.add_argument("run_dir", help="run directory containing bundles/")
    serve_p.add_argument("--port", type=int,
                         default=int(os.environ.get(PORT_ENV_VAR, DEFAULT_PORT)))
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--ui", default=None, metavar="DIR",
                         help="also serve the explorer UI from this directory "
                              "(index.html + dist/)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        if args.command == "serve":
            from .server import serve

            serve(args.run_dir, args.port, args.host, args.ui)
            return 0
        config = PipelineConfig.load(args.config)
        run = PipelineRun(config, force=args.force)
        if args.command == "train-subject":
            run.stage_subject()
        elif args.command == "synthesize":
            run.stage_synthesize()
        elif args.command == "fit":
            run.stage_bundles()  # models plus their bundles
        elif args.command == "evaluate":
            run.stage_evaluate()
        elif args.command == "render":
            run.stage_bundles()
        elif args.command == "run":
            run.run_all()
        return 0
    except TrainscapeError as exc:
        print(f"error[{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
