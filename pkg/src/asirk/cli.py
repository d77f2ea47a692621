"""Command-line interface.

Subcommands: ``verify`` (condition report and summary row), ``stability``
(region scan to CSV), ``integrate`` (trajectory to CSV), ``sweep`` /
``efficiency`` (experiment config runners), ``family`` (construct a scheme
from its free parameter).  Numeric options accept exact rationals "p/q".
Exit codes: 0 success, 2 validation/config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from .conditions import (
    additional_conditions_asirk,
    additional_conditions_imex,
    classify,
    imex_order_residuals,
    order_residuals,
)
from .exceptions import (
    AsirkError,
    ConfigError,
    NonConvergenceError,
    NumericalBlowupError,
    ReferenceUnreliableError,
    SchemeNotFoundError,
    SchemeValidationError,
    SingularMatrixError,
    SingularParameterError,
)
from .harness import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    RUN_TOL,
    resolve_scheme,
    run_experiment_suite,
    stepping_method,
)
from .integrator import integrate
from .problems import PROBLEM_FACTORIES, make_problem
from .stability import RegionGrid, boundary_to_csv, region_scan, region_scan_to_csv
from .tableau import (
    CATALOG_NAMES,
    ImexScheme,
    LowStorageParams,
    as_fraction,
    family_s2,
    family_s3,
    from_low_storage,
    is_low_storage,
    scheme_to_json,
)


def _rational(text: str) -> Fraction:
    try:
        return as_fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _print_verify(scheme, as_json):
    row = classify(scheme)
    if isinstance(scheme, ImexScheme):
        rep = imex_order_residuals(scheme.tableau, tol=scheme.tolerance)
        add = additional_conditions_imex(scheme.tableau, tol=scheme.tolerance)
    else:
        rep = order_residuals(scheme)
        add = additional_conditions_asirk(scheme)
    if as_json:
        print(json.dumps(
            {"summary": row.to_json_dict(),
             "order_conditions": rep.to_json_dict(),
             "additional_conditions": add.to_json_dict()},
            indent=2,
        ))
        return
    print(f"scheme:                {row.name}")
    print(f"order:                 {row.order_label}")
    print(f"additional conditions: {'yes' if row.additional_conditions else 'no'}")
    print(f"stiff error (u, v):    {row.stiff_error_u}, {row.stiff_error_v}")
    print(f"memory registers:      {row.registers}")
    print("condition residuals:")
    for rec in rep.records + add.records:
        mark = "ok " if rec.satisfied else "FAIL"
        print(f"  {rec.cid:10s} lhs={float(rec.lhs):+.12g} rhs={float(rec.rhs):+.12g} "
              f"residual={float(rec.residual):+.3e} [{mark}]")


def _scheme_for_stability(spec):
    scheme = resolve_scheme(spec)
    if isinstance(scheme, LowStorageParams):
        scheme = from_low_storage(scheme)
    if isinstance(scheme, ImexScheme):
        raise SchemeValidationError(
            "stability scan needs an ASIRK-form scheme (B, C, omega)"
        )
    return scheme


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asirk",
        description="Low-storage additive semi-implicit Runge-Kutta toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="condition report for a catalog scheme")
    p.add_argument("scheme", help=f"catalog name {CATALOG_NAMES} or s2:/s3:<omega1>")
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("stability", help="scan the stability region S1")
    p.add_argument("scheme")
    p.add_argument("--grid", nargs=6, metavar=("XMIN", "XMAX", "YMIN", "YMAX", "NX", "NY"))
    p.add_argument("--out", required=True, help="indicator CSV path")
    p.add_argument("--boundary-out", help="boundary polyline CSV path")

    p = sub.add_parser("integrate", help="integrate a benchmark problem")
    p.add_argument("scheme")
    p.add_argument("problem", choices=sorted(PROBLEM_FACTORIES))
    p.add_argument("--eps", type=_rational, help="stiffness parameter")
    p.add_argument("--variant", default="WP", choices=("IC", "C", "WP"))
    p.add_argument("--d", type=_rational, help="population diffusion coefficient")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--h", type=_rational, help="step size (default: canonical)")
    p.add_argument("--t-end", type=_rational, help="end time (default: canonical)")
    p.add_argument("--out", help="trajectory CSV path")

    p = sub.add_parser("sweep", help="run convergence sweeps from a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("efficiency", help="run efficiency curves from a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("run", help="run every experiment in a config file")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("family", help="build a low-storage scheme from omega1")
    p.add_argument("stages", choices=("s2", "s3"))
    p.add_argument("--omega1", type=_rational, required=True)
    p.add_argument("--json", action="store_true")

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (SchemeNotFoundError, SchemeValidationError, SingularParameterError,
            SingularMatrixError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonConvergenceError, NumericalBlowupError, ReferenceUnreliableError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except AsirkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _dispatch(args) -> int:
    if args.command == "verify":
        scheme = resolve_scheme(args.scheme)
        if isinstance(scheme, LowStorageParams):
            scheme = from_low_storage(scheme)
        _print_verify(scheme, args.json)
        return EXIT_OK

    if args.command == "stability":
        scheme = _scheme_for_stability(args.scheme)
        grid = RegionGrid()
        if args.grid:
            xmin, xmax, ymin, ymax = (float(as_fraction(v)) for v in args.grid[:4])
            grid = RegionGrid(xmin, xmax, ymin, ymax, int(args.grid[4]), int(args.grid[5]))
        scan = region_scan(scheme, grid)
        region_scan_to_csv(scan, args.out)
        if args.boundary_out:
            boundary_to_csv(scan, args.boundary_out)
        print(f"area = {scan.area:.6g} ({args.out})")
        return EXIT_OK

    if args.command == "integrate":
        kwargs = {}
        if args.problem == "population":
            if args.d is None:
                raise SchemeValidationError("population needs --d")
            kwargs = {"d": float(args.d), "seed": args.seed}
        else:
            if args.eps is None:
                raise SchemeValidationError(f"{args.problem} needs --eps")
            kwargs = {"eps": float(args.eps), "variant": args.variant}
        problem = make_problem(args.problem, **kwargs)
        h = float(args.h) if args.h is not None else problem.config.h
        t_end = float(args.t_end) if args.t_end is not None else problem.config.t_end
        rows = []
        observer = (lambda k, t, y: rows.append((t, y.copy()))) if args.out else None
        result = integrate(
            stepping_method(resolve_scheme(args.scheme)), problem.ode, problem.y0,
            problem.config.t0, t_end, h, config=RUN_TOL, observer=observer,
        )
        if args.out:
            with open(args.out, "w", newline="") as fh:
                dim = problem.ode.dim
                fh.write("t," + ",".join(f"y{i + 1}" for i in range(dim)) + "\n")
                for t, y in rows:
                    fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in y) + "\n")
        print(f"{result.steps} steps to t = {result.t:g}; "
              f"core registers = {result.memory.core_registers}, "
              f"inner iterations = {result.memory.inner_iterations}")
        return EXIT_OK

    if args.command in ("sweep", "efficiency", "run"):
        with open(args.config) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if args.command == "sweep":
            config = {k: v for k, v in config.items() if k in ("meta", "sweep")}
        elif args.command == "efficiency":
            config = {k: v for k, v in config.items() if k in ("meta", "efficiency")}
        summary = run_experiment_suite(config, args.out)
        print(f"{len(summary['outputs'])} output files in {args.out}")
        return EXIT_OK

    if args.command == "family":
        omega1 = args.omega1
        params = family_s2(omega1) if args.stages == "s2" else family_s3(omega1)
        scheme = from_low_storage(params)
        if args.json:
            print(scheme_to_json(scheme))
        else:
            print(f"{scheme.name}: omega = {tuple(str(v) for v in params.omega)}, "
                  f"gamma = {tuple(str(v) for v in params.gamma)}, "
                  f"lambda = {tuple(str(v) for v in params.lam)}")
            assert is_low_storage(scheme) is not None
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
