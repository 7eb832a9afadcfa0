"""Command-line entry point: ``reliefkit <generate|segment|retrieve|evaluate|export>``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
The default output root comes from ``$RELIEFKIT_OUT``.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pipeline
from .config import OUT_ENV, load_config, output_root, parse_value
from .errors import ReliefKitError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--profile", choices=("desk", "full"))
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--out", type=Path, help=out_help)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="reliefkit", description="Relief-pattern segmentation and retrieval toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", metavar="<generate|segment|retrieve|evaluate|export>",
                            parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("generate", help="synthesize a labeled dataset")
    _common(g, f"dataset directory (default: ${OUT_ENV}/data)")
    g.add_argument("--resume", action="store_true", help="keep models already on disk")

    s = sub.add_parser("segment", help="segment every model of a manifest")
    _common(s, f"output directory (default: ${OUT_ENV}/segment)")
    s.add_argument("--data", type=Path, required=True, help="dataset directory or manifest")
    s.add_argument("--bank", type=Path, help="reference bank (default: build from the training split)")
    s.add_argument("--splits", default="query,retrieval", help="comma-separated splits to segment")
    s.add_argument("--resume", action="store_true", help="keep label files already on disk")

    r = sub.add_parser("retrieve", help="score queries against retrieval targets")
    _common(r, f"membership CSV (default: ${OUT_ENV}/membership-<method>.csv)")
    r.add_argument("--data", type=Path, required=True, help="dataset directory or manifest")
    r.add_argument("--method", choices=("signature", "multiview"))
    r.add_argument("--labels", type=Path, help="predicted label CSVs (signature method)")
    r.add_argument("--bank", type=Path, help="reference bank (default: next to --labels)")

    e = sub.add_parser("evaluate", help="retrieval metrics for a membership matrix")
    _common(e, f"report directory (default: ${OUT_ENV}/eval)")
    e.add_argument("--membership", type=Path, required=True)
    e.add_argument("--truth", type=Path, required=True,
                   help="directory of <id>.csv truth labels, a dataset directory, or a manifest")

    x = sub.add_parser("export", help="write face-colored PLY files")
    _common(x, f"PLY file or directory (default: ${OUT_ENV}/export)")
    x.add_argument("--mesh", type=Path)
    x.add_argument("--data", type=Path, help="dataset directory; exports every labeled model")
    x.add_argument("--labels", type=Path, required=True, help="label CSV, or a directory with --data")
    x.add_argument("--binary", action="store_true")
    return ap


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = (t.strip() for t in item.split("=", 1))
        parse_value(k, v)
        ov[k] = v
    for k in ("profile", "seed", "workers"):
        if getattr(args, k, None) is not None:
            ov[k] = getattr(args, k)
    if getattr(args, "method", None) is not None:
        ov["method"] = args.method
    return ov


def _dispatch(args) -> dict:
    cfg = load_config(args.config, args.command, _overrides(args))
    root = output_root()
    out = args.out or (Path(cfg.get("out")) if cfg.get("out") else None)
    cmd = args.command
    if cmd == "generate":
        return pipeline.run_generate(cfg, out or root / "data", resume=args.resume)
    if cmd == "segment":
        splits = tuple(x.strip() for x in args.splits.split(",") if x.strip())
        bad = [x for x in splits if x not in ("query", "retrieval", "training")]
        if bad or not splits:
            raise UsageError(f"--splits: unknown split(s) {bad}")
        return pipeline.run_segment(cfg, args.data, out or root / "segment", args.bank, splits,
                                    resume=args.resume)
    if cmd == "retrieve":
        method = cfg.get("method")
        target = out or root / f"membership-{method}.csv"
        return pipeline.run_retrieve(cfg, args.data, target, args.labels, args.bank, method)
    if cmd == "evaluate":
        return pipeline.run_evaluate(cfg, args.membership, args.truth, out or root / "eval")
    if cmd == "export":
        return pipeline.run_export(cfg, out or root / "export", args.mesh, args.labels, args.data,
                                   binary=args.binary)
    raise UsageError(f"unknown subcommand {cmd!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = _dispatch(args)
    except UsageError as exc:
        print(f"reliefkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReliefKitError as exc:
        print(f"reliefkit: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    if args.verbose:
        print(summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
