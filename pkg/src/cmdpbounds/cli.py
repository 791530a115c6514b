"""Command-line interface: ``cmdpbounds <subcommand> [options]``.

Exit codes: 0 success, 1 unexpected error, 2 parse/validation error,
3 infeasible, 4 degenerate basis, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import harness
from .bounds import duality_upper_bound
from .cmdp import load_cmdp
from .exceptions import (CmdpError, DegenerateBasis, Infeasible, InfeasibleVertex, NumericalFailure,
                         SingularR, ValidationError)
from .lp import solve_cmdp

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_DEGENERATE = 4
EXIT_NUMERICAL = 5

log = logging.getLogger("cmdpbounds")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_PARSE) from exc


def _vector_arg(text: Optional[str], key: str):
    """A JSON file holding a list (or ``{key: list}``), or an inline comma-separated list."""
    if text is None:
        return None
    if Path(text).exists():
        data = _read_json(text)
        if isinstance(data, dict):
            data = data[key]
    else:
        try:
            data = [float(v) for v in text.split(",")]
        except ValueError as exc:
            raise CliError(f"{text!r} is neither a file nor a comma-separated list", EXIT_PARSE) from exc
    return np.asarray(data, dtype=float)


def _load_config(args) -> dict:
    cfg = {} if args.config is None else _read_json(args.config)
    if not isinstance(cfg, dict):
        raise CliError("config must be a JSON object", EXIT_PARSE)
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _emit(args, report: harness.ExperimentReport):
    if args.out:
        report.write(args.out)
    if args.json:
        print(json.dumps(harness._jsonable(report.summary), sort_keys=True))
    elif not args.out:
        sys.stdout.write(report.csv_text())


def cmd_solve(args) -> int:
    try:
        cmdp = load_cmdp(args.cmdp)
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise CliError(f"cannot read {args.cmdp}: {exc}", EXIT_PARSE) from exc
    beta = _vector_arg(args.beta, "beta")
    tau = _vector_arg(args.tau, "tau")
    backend = harness.pick_backend(args.backend, cmdp.n_states)
    sol = solve_cmdp(cmdp, beta, tau, backend=backend)
    if args.json:
        print(sol.to_json())
    else:
        print(sol.value if sol.status == "optimal" else sol.status)
    if sol.status == "infeasible":
        return EXIT_INFEASIBLE
    if sol.status != "optimal":
        return EXIT_NUMERICAL
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "solution.json").write_text(sol.to_json())
        cert = duality_upper_bound(sol, sol.beta)
        (out / "certificate.json").write_text(cert.to_json())
    if args.certificate:
        Path(args.certificate).write_text(sol.to_json())
    return EXIT_OK


def cmd_bounds_sweep(args) -> int:
    _emit(args, harness.bounds_sweep(_load_config(args), jobs=args.jobs))
    return EXIT_OK


def cmd_regret_set(args) -> int:
    _emit(args, harness.regret_set(_load_config(args)))
    return EXIT_OK


def cmd_min_regret(args) -> int:
    _emit(args, harness.min_regret(_load_config(args)))
    return EXIT_OK


def cmd_generate(args) -> int:
    if not args.out:
        raise CliError("generate needs --out", EXIT_PARSE)
    cfg = {} if args.config is None else _read_json(args.config)
    if args.seed is not None:
        if cfg.get("kind", "random") == "random":
            cfg["seeds"] = [args.seed]
        else:
            cfg.setdefault("config", {})["seed"] = args.seed
    manifest = harness.generate(cfg, args.out)
    if args.json:
        print(json.dumps(manifest, sort_keys=True))
    else:
        for name in manifest["files"]:
            print(Path(args.out) / name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cmdpbounds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve one CMDP file")
    p.add_argument("cmdp", help="CMDP JSON file")
    p.add_argument("--beta", help="start distribution: JSON file or comma-separated list")
    p.add_argument("--tau", help="threshold override: JSON file or comma-separated list")
    p.add_argument("--backend", default="auto", choices=["auto", "simplex", "highs"])
    p.add_argument("--certificate", help="write the solution (primal, dual, status) as JSON here")
    p.set_defaults(func=cmd_solve)

    for name, func, text in (("bounds-sweep", cmd_bounds_sweep, "bound tightness sweep"),
                             ("regret-set", cmd_regret_set, "regret-set hit rates"),
                             ("min-regret", cmd_min_regret, "robust minimal regret bracket"),
                             ("generate", cmd_generate, "write benchmark instances")):
        sub.add_parser(name, parents=[common], help=text).set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (Infeasible, InfeasibleVertex) as exc:
        log.error("infeasible: %s", exc)
        return EXIT_INFEASIBLE
    except (DegenerateBasis, SingularR) as exc:
        log.error("degenerate: %s", exc)
        return EXIT_DEGENERATE
    except NumericalFailure as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        log.error("invalid input: %s", exc)
        return EXIT_PARSE
    except CmdpError as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
