"""Experiment driver: convergence sweeps, efficiency curves, one-step stiff
scaling tables, region exports, and the config-file runner behind the CLI.

Error measure: the relative L-infinity global error per solution component,
max over the shared time grid of the deviation from the reference divided by
the max reference magnitude over the same grid.  Rates compare steps h and
h/2 against one reference trajectory computed at (h/2)/2^8.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AsirkError,
    ConfigError,
    NonConvergenceError,
    NumericalBlowupError,
    ReferenceUnreliableError,
)
from .integrator import StepperConfig, integrate
from .problems import (
    LinearRelaxationModel,
    Problem,
    exact_relaxation_solution,
    linear_relaxation,
    make_problem,
    reference_solution,
)
from .stability import RegionGrid, boundary_to_csv, region_scan, region_scan_to_csv
from .tableau import (
    AsirkScheme,
    ImexScheme,
    LowStorageParams,
    as_fraction,
    catalog,
    family_s2,
    family_s3,
    from_low_storage,
    is_low_storage,
)

__all__ = [
    "SweepRecord",
    "SweepResult",
    "EfficiencyCurve",
    "StiffScalingResult",
    "resolve_scheme",
    "stepping_method",
    "relative_linf_errors",
    "convergence_sweep",
    "efficiency_curve",
    "stiff_scaling_table",
    "run_experiment_suite",
    "EXIT_OK",
    "EXIT_CONFIG",
    "EXIT_NUMERICAL",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

RUN_TOL = StepperConfig(tol=1e-12)
REF_REFINE = 256  # reference step = (h/2) / 2^8


def resolve_scheme(spec):
    """Accept a catalog name, 's2:<q>'/'s3:<q>' family spec, or scheme object."""
    if isinstance(spec, (AsirkScheme, ImexScheme, LowStorageParams)):
        return spec
    if isinstance(spec, str):
        text = spec.strip()
        if text.lower().startswith(("s2:", "s3:")):
            kind, _, value = text.partition(":")
            omega1 = as_fraction(value)
            return family_s2(omega1) if kind.lower() == "s2" else family_s3(omega1)
        return catalog(text)
    raise ConfigError(f"cannot interpret scheme spec {spec!r}")


def stepping_method(scheme):
    """Pick the cheapest faithful stepping representation of a scheme.

    Low-storage-pattern ASIRK schemes run in the 3-register kernel; other
    ASIRK schemes use the all-stages reference; tableau-backed schemes use
    the IMEX reference stepper.
    """
    if isinstance(scheme, LowStorageParams):
        return scheme
    if isinstance(scheme, AsirkScheme):
        params = is_low_storage(scheme, tol=scheme.tolerance)
        return params if params is not None else scheme
    return scheme


def relative_linf_errors(problem: Problem, coarse_states, ref_states):
    """Per-component relative L-inf global error over the shared grid."""
    coarse = np.asarray(coarse_states)
    ref = np.asarray(ref_states)
    errors = {}
    for name, sl in problem.components:
        dev = np.max(np.abs(coarse[:, sl] - ref[:, sl]))
        scale = np.max(np.abs(ref[:, sl]))
        errors[name] = float(dev / scale) if scale > 0 else float(dev)
    return errors


def _trajectory(method, problem: Problem, h, t_end=None, config=RUN_TOL):
    t_end = problem.config.t_end if t_end is None else t_end
    states = []

    def observer(k, t, y):
        states.append(y.copy())

    integrate(method, problem.ode, problem.y0, problem.config.t0, t_end, h,
              config=config, observer=observer)
    return np.array(states)


@dataclass
class SweepRecord:
    eps: float
    E_h: dict | None
    E_h2: dict | None
    rate: dict | None
    failure: str | None = None


@dataclass
class SweepResult:
    scheme: str
    problem: str
    variant: str
    h: float
    records: list[SweepRecord] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def min_rate(self) -> float:
        vals = [
            r
            for rec in self.records
            if rec.rate is not None
            for r in rec.rate.values()
            if math.isfinite(r)
        ]
        if not vals:
            raise AsirkError("sweep produced no finite rates")
        return min(vals)

    def rates_for(self, comp: str) -> dict[float, float]:
        return {rec.eps: rec.rate[comp] for rec in self.records if rec.rate}


def convergence_sweep(scheme_spec, problem_name, variant, eps_list, h=None,
                      problem_kwargs=None, check_reference=True,
                      reference_cache=None) -> SweepResult:
    """Rates log2(E_h / E_{h/2}) per component for each stiffness value.

    The reference is recomputed per eps with the 3-stage reference scheme at
    (h/2)/2^8 and must be at least two digits better than the measured
    errors, otherwise the record is flagged reference-unreliable.  Pass a
    dict as ``reference_cache`` to share references across schemes (they do
    not depend on the scheme under test).
    """
    scheme = resolve_scheme(scheme_spec)
    method = stepping_method(scheme)
    problem_kwargs = dict(problem_kwargs or {})
    result = None
    for eps in eps_list:
        problem = make_problem(problem_name, eps=eps, variant=variant, **problem_kwargs)
        h_run = problem.config.h if h is None else h
        if result is None:
            result = SweepResult(
                scheme=getattr(scheme, "name", str(scheme_spec)),
                problem=problem.name,
                variant=variant,
                h=h_run,
                metadata={
                    "inner_tol": RUN_TOL.tol,
                    "t_end": problem.config.t_end,
                    "reference_refine": REF_REFINE,
                },
            )
        try:
            key = (problem_name, variant, eps, h_run,
                   tuple(sorted(problem_kwargs.items())))
            ref = None if reference_cache is None else reference_cache.get(key)
            if ref is None:
                ref = reference_solution(problem, h_run / 2, refine=REF_REFINE,
                                         check=check_reference)
                if reference_cache is not None:
                    reference_cache[key] = ref
            coarse = _trajectory(method, problem, h_run)
            half = _trajectory(method, problem, h_run / 2)
            E_h = relative_linf_errors(problem, coarse, ref.states[::2])
            E_h2 = relative_linf_errors(problem, half, ref.states)
            floor = min(min(E_h.values()), min(E_h2.values()))
            if check_reference and ref.uncertainty > floor / 100.0:
                raise ReferenceUnreliableError(
                    f"reference uncertainty {ref.uncertainty:g} too close to "
                    f"measured error {floor:g}"
                )
            rate = {
                name: math.log2(E_h[name] / E_h2[name]) for name in E_h
            }
            result.records.append(SweepRecord(eps=eps, E_h=E_h, E_h2=E_h2, rate=rate))
        except (NonConvergenceError, NumericalBlowupError, ReferenceUnreliableError) as exc:
            result.records.append(
                SweepRecord(eps=eps, E_h=None, E_h2=None, rate=None,
                            failure=f"{type(exc).__name__}: {exc}")
            )
    return result


@dataclass
class EfficiencyCurve:
    scheme: str
    problem: str
    variant: str
    eps: float
    records: list[dict] = field(default_factory=list)  # {h, n_steps, err: {comp: val}}

    def errors_for(self, comp: str) -> dict[int, float]:
        return {rec["n_steps"]: rec["err"][comp] for rec in self.records
                if rec.get("err") is not None}


def efficiency_curve(scheme_spec, problem_name, eps, variant, h_list,
                     problem_kwargs=None, reference=None) -> EfficiencyCurve:
    """Final-time error per component versus step count.

    The reference state at t_end is shared across schemes; pass it in to
    avoid recomputation when comparing methods.
    """
    scheme = resolve_scheme(scheme_spec)
    method = stepping_method(scheme)
    problem_kwargs = dict(problem_kwargs or {})
    problem = make_problem(problem_name, eps=eps, variant=variant, **problem_kwargs)
    span = problem.config.t_end - problem.config.t0
    if reference is None:
        reference = efficiency_reference(problem, h_list)
    curve = EfficiencyCurve(
        scheme=getattr(scheme, "name", str(scheme_spec)),
        problem=problem.name,
        variant=variant,
        eps=eps,
    )
    for h in sorted(h_list, reverse=True):
        n_steps = round(span / h)
        rec = {"h": h, "n_steps": n_steps}
        try:
            run = integrate(method, problem.ode, problem.y0, problem.config.t0,
                            problem.config.t_end, h, config=RUN_TOL)
            final = run.y[None, :]
            rec["err"] = relative_linf_errors(problem, final, reference[None, :])
        except (NonConvergenceError, NumericalBlowupError) as exc:
            rec["err"] = None
            rec["failure"] = f"{type(exc).__name__}: {exc}"
        curve.records.append(rec)
    return curve


def efficiency_reference(problem: Problem, h_list, refine=REF_REFINE) -> np.ndarray:
    """Accurate final state for efficiency comparisons (finest h / 2^8)."""
    h_min = min(h_list)
    ref = reference_solution(problem, h_min, refine=refine, check=False)
    return ref.states[-1]


@dataclass
class StiffScalingResult:
    """Signed one-step errors on the linear relaxation model over an
    (eps, h) grid, with log-log slope fits per component."""

    scheme: str
    model: dict
    eps_grid: tuple
    h_grid: tuple
    errors: dict  # (eps, h) -> {"u": signed, "v": signed}
    fits: dict = field(default_factory=dict)

    def error(self, eps, h, comp):
        return self.errors[(eps, h)][comp]


_FIT_FLOOR = 1e-14


def _loglog_slope(xs, ys):
    pts = [(x, y) for x, y in zip(xs, ys) if y > _FIT_FLOOR]
    if len(pts) < 2:
        return float("nan")
    lx = np.log([p[0] for p in pts])
    ly = np.log([p[1] for p in pts])
    return float(np.polyfit(lx, ly, 1)[0])


def stiff_scaling_table(scheme_spec, model: LinearRelaxationModel | None = None,
                        eps_grid=(1e-12, 1e-8, 1e-6, 1e-5, 1e-4),
                        h_grid=(1e-3, 2e-3, 4e-3, 1e-2, 2e-2, 4e-2),
                        u0=1.0) -> StiffScalingResult:
    """One-step errors |y_1 - y(h)| against the exact matrix exponential.

    Fits: the h-slope at the smallest eps on the raw errors, and the
    eps-slope at each h on the differences err(eps) - err(eps_min), which
    isolates the eps-dependent error term from the pure-h floor.
    """
    scheme = resolve_scheme(scheme_spec)
    method = stepping_method(scheme)
    base = model or LinearRelaxationModel()
    errors = {}
    for eps in eps_grid:
        m = LinearRelaxationModel(base.delta1, base.sigma1, base.delta2,
                                  base.sigma2, base.c, eps)
        problem = linear_relaxation(m)
        y0 = m.consistent_state(u0)
        for h in h_grid:
            run = integrate(method, problem.ode, y0, 0.0, h, h, config=RUN_TOL)
            exact = exact_relaxation_solution(m, y0, h)
            errors[(eps, h)] = {"u": float(run.y[0] - exact[0]),
                                "v": float(run.y[1] - exact[1])}
    result = StiffScalingResult(
        scheme=getattr(scheme, "name", str(scheme_spec)),
        model={"delta1": base.delta1, "sigma1": base.sigma1, "delta2": base.delta2,
               "sigma2": base.sigma2, "c": base.c},
        eps_grid=tuple(eps_grid),
        h_grid=tuple(h_grid),
        errors=errors,
    )
    eps_min = min(eps_grid)
    for comp in ("u", "v"):
        hs = sorted(h_grid)
        result.fits[f"h_slope_{comp}"] = _loglog_slope(
            hs, [abs(errors[(eps_min, h)][comp]) for h in hs]
        )
        eps_pts = sorted(e for e in eps_grid if e > eps_min)
        for h in h_grid:
            diffs = [abs(errors[(e, h)][comp] - errors[(eps_min, h)][comp])
                     for e in eps_pts]
            result.fits[f"eps_slope_{comp}@h={h:g}"] = _loglog_slope(eps_pts, diffs)
    return result


# -- config-file runner -------------------------------------------------------
#
# Config files are JSON: a top-level object whose keys select experiment
# kinds; each kind holds a list of experiment specs.  Schema (all lists):
#
#   {"meta":       {"name": str},
#    "sweep":      [{"problem": str, "schemes": [spec], "variants": [str],
#                    "eps": [float], "h": float?, "problem_args": {}}],
#    "efficiency": [{"problem": str, "schemes": [spec], "variant": str,
#                    "eps": float, "h": [float], "problem_args": {}}],
#    "region":     [{"omega1": [num or "p/q"], "grid": {x_min ... ny}?}],
#    "verify":     [{"schemes": [spec]}],
#    "stiff_table":[{"schemes": [spec], "eps": [float]?, "h": [float]?}],
#    "population": [{"schemes": [spec], "d": [float], "seed": int?}]}
#
# A scheme spec is a catalog name or "s2:<omega1>"/"s3:<omega1>".

_KNOWN_KEYS = {"meta", "sweep", "efficiency", "region", "verify",
               "stiff_table", "population"}


def _slug(text: str) -> str:
    out = []
    for ch in str(text):
        out.append(ch.lower() if ch.isalnum() else "-")
    slug = "".join(out)
    while "--" in slug:
        slug = slug.replace("--", "-")
    return slug.strip("-")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path, header_comment, columns, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _sweep_rows(result: SweepResult):
    comps = []
    for rec in result.records:
        if rec.E_h is not None:
            comps = list(rec.E_h)
            break
    columns = ["eps"]
    for c in comps:
        columns += [f"E_h_{c}", f"E_h2_{c}", f"rate_{c}"]
    columns.append("failure")
    rows = []
    for rec in sorted(result.records, key=lambda r: -r.eps):
        row = [rec.eps]
        for c in comps:
            if rec.E_h is None:
                row += ["nan", "nan", "nan"]
            else:
                row += [rec.E_h[c], rec.E_h2[c], rec.rate[c]]
        row.append(rec.failure or "")
        rows.append(row)
    return columns, rows


def _efficiency_rows(curve: EfficiencyCurve):
    comps = []
    for rec in curve.records:
        if rec.get("err"):
            comps = list(rec["err"])
            break
    columns = ["h", "n_steps"] + [f"err_{c}" for c in comps] + ["failure"]
    rows = []
    for rec in sorted(curve.records, key=lambda r: r["n_steps"]):
        row = [rec["h"], rec["n_steps"]]
        for c in comps:
            row.append(rec["err"][c] if rec.get("err") else "nan")
        row.append(rec.get("failure", ""))
        rows.append(row)
    return columns, rows


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def run_experiment_suite(config, out_dir) -> dict:
    """Execute the experiments described by a config mapping or JSON path.

    Writes one CSV per experiment item plus ``summary.json``; returns the
    summary dict.  Deterministic: identical config and seeds give byte
    identical outputs.
    """
    if isinstance(config, (str, os.PathLike)):
        with open(config) as fh:
            try:
                config = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require(isinstance(config, dict), "config root must be an object")
    unknown = set(config) - _KNOWN_KEYS
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    chash = _config_hash(config)
    header = f"config-sha256: {chash}"
    outputs = []

    def emit(name, columns, rows):
        path = os.path.join(out_dir, name)
        _write_csv(path, header, columns, rows)
        outputs.append(name)

    for i, spec in enumerate(config.get("sweep", [])):
        _require(isinstance(spec, dict), f"sweep[{i}] must be an object")
        for key in ("problem", "schemes", "variants", "eps"):
            _require(key in spec, f"sweep[{i}].{key} is required")
        for scheme in spec["schemes"]:
            for variant in spec["variants"]:
                res = convergence_sweep(
                    scheme, spec["problem"], variant, spec["eps"],
                    h=spec.get("h"), problem_kwargs=spec.get("problem_args"),
                )
                cols, rows = _sweep_rows(res)
                emit(
                    f"sweep_{_slug(spec['problem'])}_{_slug(scheme)}_{_slug(variant)}.csv",
                    cols, rows,
                )

    for i, spec in enumerate(config.get("efficiency", [])):
        _require(isinstance(spec, dict), f"efficiency[{i}] must be an object")
        for key in ("problem", "schemes", "variant", "eps", "h"):
            _require(key in spec, f"efficiency[{i}].{key} is required")
        problem = make_problem(spec["problem"], eps=spec["eps"],
                               variant=spec["variant"],
                               **spec.get("problem_args", {}))
        ref = efficiency_reference(problem, spec["h"])
        for scheme in spec["schemes"]:
            curve = efficiency_curve(
                scheme, spec["problem"], spec["eps"], spec["variant"], spec["h"],
                problem_kwargs=spec.get("problem_args"), reference=ref,
            )
            cols, rows = _efficiency_rows(curve)
            emit(
                f"efficiency_{_slug(spec['problem'])}_{_slug(scheme)}.csv",
                cols, rows,
            )

    for i, spec in enumerate(config.get("region", [])):
        _require(isinstance(spec, dict), f"region[{i}] must be an object")
        _require("omega1" in spec, f"region[{i}].omega1 is required")
        grid = RegionGrid(**spec["grid"]) if "grid" in spec else RegionGrid()
        for omega1 in spec["omega1"]:
            params = family_s3(as_fraction(omega1))
            scan = region_scan(from_low_storage(params), grid)
            name = f"region_omega1_{_slug(omega1)}.csv"
            region_scan_to_csv(scan, os.path.join(out_dir, name))
            outputs.append(name)
            bname = f"region_omega1_{_slug(omega1)}_boundary.csv"
            boundary_to_csv(scan, os.path.join(out_dir, bname))
            outputs.append(bname)

    for i, spec in enumerate(config.get("verify", [])):
        from .conditions import classify, order_residuals

        _require(isinstance(spec, dict), f"verify[{i}] must be an object")
        _require("schemes" in spec, f"verify[{i}].schemes is required")
        rows = []
        for name in spec["schemes"]:
            scheme = resolve_scheme(name)
            if isinstance(scheme, LowStorageParams):
                scheme = from_low_storage(scheme)
            row = classify(scheme)
            rows.append([
                row.name, row.order_label,
                "yes" if row.additional_conditions else "no",
                row.stiff_error_u, row.stiff_error_v, row.registers,
            ])
        emit(
            f"verify_{i}.csv",
            ["scheme", "order", "additional_conditions", "stiff_u", "stiff_v",
             "registers"],
            rows,
        )

    for i, spec in enumerate(config.get("stiff_table", [])):
        _require(isinstance(spec, dict), f"stiff_table[{i}] must be an object")
        _require("schemes" in spec, f"stiff_table[{i}].schemes is required")
        kwargs = {}
        if "eps" in spec:
            kwargs["eps_grid"] = tuple(spec["eps"])
        if "h" in spec:
            kwargs["h_grid"] = tuple(spec["h"])
        for scheme in spec["schemes"]:
            table = stiff_scaling_table(scheme, **kwargs)
            rows = [
                [eps, h, table.errors[(eps, h)]["u"], table.errors[(eps, h)]["v"]]
                for eps in table.eps_grid
                for h in table.h_grid
            ]
            emit(
                f"stiff_table_{_slug(scheme)}.csv",
                ["eps", "h", "err_u", "err_v"],
                rows,
            )

    for i, spec in enumerate(config.get("population", [])):
        _require(isinstance(spec, dict), f"population[{i}] must be an object")
        for key in ("schemes", "d"):
            _require(key in spec, f"population[{i}].{key} is required")
        for d in spec["d"]:
            problem = make_problem("population", d=d, seed=spec.get("seed", 42))
            ref = reference_solution(problem, problem.config.h, refine=REF_REFINE,
                                     check=False)
            for scheme in spec["schemes"]:
                method = stepping_method(resolve_scheme(scheme))
                states = _trajectory(method, problem, problem.config.h)
                dev = np.max(np.abs(states[-1] - ref.states[-1]))
                emit(
                    f"population_d{_slug(d)}_{_slug(scheme)}.csv",
                    ["x", "P_final", "P_reference"],
                    [
                        [j / problem.ode.dim, states[-1][j], ref.states[-1][j]]
                        for j in range(problem.ode.dim)
                    ],
                )
                outputs.append(f"# deviation {scheme} d={d}: {dev:.6g}")

    summary = {
        "config_sha256": chash,
        "outputs": [o for o in outputs if not o.startswith("#")],
        "notes": [o[2:] for o in outputs if o.startswith("#")],
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
