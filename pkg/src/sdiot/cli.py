"""Command line: ``run``, ``validate`` and ``matrix``.

Exit codes: 0 success, 1 scenario/config error, 2 invariant failure,
3 a matrix cell failed.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .errors import ConfigError, InvariantError
from .scenarios import load_scenario, matrix_suite, run_scenario, write_outputs

LOG_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "trace": logging.DEBUG}
EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_CELL = 0, 1, 2, 3

log = logging.getLogger("sdiot")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdiot", description="Scenario runner for the SDN IoT security gateway.")
    p.add_argument("--log-level", choices=sorted(LOG_LEVELS), default="quiet")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario file and write its report")
    run.add_argument("file", type=Path)
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", type=Path, help="output directory (default: out/<scenario name>)")
    run.add_argument("--check-secrets", action="store_true",
                     help="also scan every frame and the audit trail for device secrets")

    val = sub.add_parser("validate", help="parse and validate a scenario file")
    val.add_argument("file", type=Path)

    mat = sub.add_parser("matrix", help="run the paired on/off scenario for every coverage cell")
    mat.add_argument("--out", type=Path, default=Path("out/matrix"))
    mat.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    mat.add_argument("--library", type=Path, help="scenario directory (default: bundled library)")
    return p


def _load(path: Path):
    try:
        return load_scenario(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def cmd_run(args) -> int:
    spec = _load(args.file)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed).validate()
    report = run_scenario(spec, check_secrets=args.check_secrets)
    out = write_outputs(report, args.out or Path("out") / spec.name)
    sys.stdout.write(report.to_text())
    print(f"\noutputs written to {out}")
    if not report.ok:
        bad = ", ".join(n for n, ok in report.invariants if not ok)
        raise InvariantError(f"invariant(s) violated: {bad}")
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = _load(args.file)
    print(f"ok: {spec.name} ({len(spec.attacks)} attack(s), modules {','.join(sorted(spec.modules)) or '-'})")
    return EXIT_OK


def cmd_matrix(args) -> int:
    def progress(r):
        log.info("%s / %s: %s", r.cell.threat, r.cell.module_name, r.status)
    report = matrix_suite(args.library, jobs=max(1, args.jobs), out_dir=args.out, progress=progress)
    sys.stdout.write(report.to_text())
    print(f"\ngrid written to {args.out / 'grid.txt'}")
    return EXIT_OK if report.ok else EXIT_CELL


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "matrix": cmd_matrix}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[args.log_level], format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantError as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
