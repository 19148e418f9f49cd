"""Command-line front end.

    photonlock run CONFIG [--out DIR] [--seed N] [--threads N] [--quiet]
    photonlock validate CONFIG
    photonlock sweep CONFIG --axis NAME --values V1,V2,...
    photonlock plotdata RECORD.json [--out DIR]

Exit codes: 0 success, 1 internal error, 2 config error, 3 more than 10%
of sweep points failed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import SWEEP_AXES, ConfigError, load_config, validate_config
from .scenarios import FAIL_FRACTION, emit_plotdata, load_record, run_scenario, summary_text, write_outputs

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("photonlock")


def _values(text: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="photonlock", description="Locked stimulated photon echo simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", type=Path)
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1, help="sweep points run concurrently")
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("run", help="run the scenario described by a config"))
    p = sub.add_parser("sweep", help="run a config with a replaced sweep axis")
    common(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, type=_values)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config", type=Path)
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("plotdata", help="write plot CSVs from a run record")
    p.add_argument("record", type=Path)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--quiet", action="store_true")
    return ap


def _run(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(seed=args.seed, out=args.out, axis=getattr(args, "axis", None),
                             values=getattr(args, "values", None))
    if getattr(args, "axis", None) is not None and not args.values:
        raise ConfigError(["--values must not be empty"], "schema")

    def progress(p):
        if p.status == "ok":
            log.info("point %d (%s): intensity %.6g", p.index, p.value, p.intensity)
        else:
            log.warning("point %d (%s) failed: %s", p.index, p.value, p.error)

    rec = run_scenario(cfg, threads=max(1, args.threads), progress=progress)
    files = write_outputs(rec, cfg.data["output"]["dir"])
    if not args.quiet:
        sys.stdout.write(summary_text(rec))
        print(f"wall time: {rec.wall_time:.1f} s")
        for f in files:
            if "_traces" not in f.parent.name:
                print(f"wrote {f}")
    if rec.failed_fraction > FAIL_FRACTION:
        log.error("%d of %d sweep points failed", rec.n_failed, len(rec.points))
        return EXIT_PARTIAL
    return EXIT_OK


def _validate(args) -> int:
    errs = validate_config(args.config)
    if errs:
        for e in errs:
            print(e, file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        print(f"{args.config}: ok")
    return EXIT_OK


def _plotdata(args) -> int:
    try:
        rec = load_record(args.record)
    except (OSError, ValueError) as exc:
        print(f"[io] cannot read record {args.record}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        files = emit_plotdata(rec, args.out or args.record.parent)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not args.quiet:
        for f in files:
            print(f"wrote {f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    handler = {"run": _run, "sweep": _run, "validate": _validate, "plotdata": _plotdata}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"[{exc.kind}] {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
