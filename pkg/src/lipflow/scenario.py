"""Scenario files: strict JSON schema, loading, and check execution.

A scenario declares a region, named fields and functions in the expression
language, and a list of checks drawn from the theorem harness.  Runs are
deterministic: fixed seeds, no clock data, reports written as JSON plus a
CSV twin (and a rendered figure unless disabled).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import jsonschema

from .calculus import QuadratureAlongFlow, make_cutoff_field
from .errors import LipflowError, ParseError, ScenarioError
from .expr import parse
from .field import VectorField
from .flow import IntegratorConfig
from .grid import TestFunction, sample
from .region import Region
from . import theorems

CHECK_KINDS = (
    "main_equivalence",
    "dq_distribution_limit",
    "jacobian_bounds",
    "weakstar_divergence",
    "semigroup",
    "commutation",
    "upper_gradient",
    "system",
    "cutoff_localization",
    "lebesgue_points",
    "uniform_integrability",
)

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "region", "fields", "functions", "checks"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "region": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dim", "lower", "upper"],
            "properties": {
                "dim": {"type": "integer", "minimum": 1, "maximum": 16},
                "lower": {"type": "array", "items": {"type": "number"}},
                "upper": {"type": "array", "items": {"type": "number"}},
                "sub": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["lower", "upper"],
                    "properties": {
                        "lower": {"type": "array", "items": {"type": "number"}},
                        "upper": {"type": "array", "items": {"type": "number"}},
                    },
                },
            },
        },
        "fields": {
            "type": "object",
            "minProperties": 0,
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["components", "lipschitz"],
                "properties": {
                    "components": {"type": "array", "items": {"type": "string"},
                                   "minItems": 1},
                    "lipschitz": {"type": "number", "minimum": 0},
                },
            },
        },
        "functions": {
            "type": "object",
            "additionalProperties": {"type": "string"},
        },
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind", "args", "t_sequence", "threshold"],
                "properties": {
                    "kind": {"type": "string", "enum": list(CHECK_KINDS)},
                    "args": {"type": "object"},
                    "t_sequence": {"type": "array", "items": {"type": "number"},
                                   "minItems": 1},
                    "threshold": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
        "output": {"type": "string"},
    },
}

@dataclass(frozen=True)
class CheckSpec:
    kind: str
    args: dict
    t_sequence: tuple
    threshold: float


@dataclass(frozen=True)
class Scenario:
    name: str
    region: Region
    fields: dict            # name -> VectorField
    functions: dict         # name -> Expression
    checks: List[CheckSpec]
    output: str


def _reference_slots(kind: str):
    """(field-name slots, field-list slots, function-name slots) per kind."""
    field_slots = []
    field_list_slots = []
    function_slots = []
    if kind in ("main_equivalence", "dq_distribution_limit", "jacobian_bounds",
                "weakstar_divergence", "semigroup", "commutation", "upper_gradient",
                "cutoff_localization", "lebesgue_points"):
        field_slots.append("field")
    if kind == "system":
        field_list_slots.append("fields")
    if kind == "uniform_integrability":
        field_slots.append("field")  # optional, only with dq_of
    if kind in ("main_equivalence", "dq_distribution_limit", "commutation",
                "upper_gradient", "system", "cutoff_localization", "lebesgue_points"):
        function_slots.append("f")
    if kind in ("main_equivalence", "cutoff_localization"):
        function_slots.append("g")
    if kind in ("upper_gradient", "system"):
        function_slots.append("h")
    return field_slots, field_list_slots, function_slots


def load_scenario(path) -> Scenario:
    """Read, schema-validate, and fully resolve a scenario file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} does not exist")
    except json.JSONDecodeError as err:
        raise ScenarioError(f"{path}: invalid JSON: {err}")
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<top level>"
        raise ScenarioError(f"{path}: schema violation at {where}: {err.message}")

    dim = raw["region"]["dim"]
    if len(raw["region"]["lower"]) != dim or len(raw["region"]["upper"]) != dim:
        raise ScenarioError(f"{path}: region bounds must have length dim={dim}")
    sub = None
    if "sub" in raw["region"]:
        sub = Region(tuple(raw["region"]["sub"]["lower"]),
                     tuple(raw["region"]["sub"]["upper"]))
    region = Region(tuple(raw["region"]["lower"]), tuple(raw["region"]["upper"]), sub=sub)

    fields = {}
    for name, spec in raw["fields"].items():
        if len(spec["components"]) != dim:
            raise ScenarioError(f"field {name!r}: needs {dim} components")
        try:
            fields[name] = VectorField.from_components(
                region, spec["components"], lipschitz=spec["lipschitz"], name=name)
        except ParseError as err:
            raise ScenarioError(f"field {name!r}: {err}")

    functions = {}
    for name, text in raw["functions"].items():
        try:
            functions[name] = parse(text, dim)
        except ParseError as err:
            raise ScenarioError(f"function {name!r}: {err}")

    checks = []
    for i, spec in enumerate(raw["checks"]):
        kind = spec["kind"]
        ts = spec["t_sequence"]
        if any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
            raise ScenarioError(
                f"check {i} ({kind}): t_sequence must be positive and strictly decreasing")
        args = dict(spec["args"])
        f_slots, flist_slots, fn_slots = _reference_slots(kind)
        for slot in f_slots:
            name = args.get(slot)
            if name is not None and name not in fields:
                raise ScenarioError(f"check {i} ({kind}): undefined field {name!r}")
        for slot in flist_slots:
            for name in args.get(slot, ()):
                if name not in fields:
                    raise ScenarioError(f"check {i} ({kind}): undefined field {name!r}")
        for slot in fn_slots:
            name = args.get(slot)
            if name is not None and name not in functions:
                raise ScenarioError(f"check {i} ({kind}): undefined function {name!r}")
        for name in args.get("functions", ()):
            if name not in functions:
                raise ScenarioError(f"check {i} ({kind}): undefined function {name!r}")
        if "dq_of" in args and args["dq_of"] not in functions:
            raise ScenarioError(
                f"check {i} ({kind}): undefined function {args['dq_of']!r}")
        checks.append(CheckSpec(kind, args, tuple(float(t) for t in ts),
                                float(spec["threshold"])))

    return Scenario(raw["name"], region, fields, functions, checks,
                    raw.get("output", "./reports"))


def _integrator(args: dict) -> IntegratorConfig:
    return IntegratorConfig(
        base_step=float(args.get("base_step", 0.01)),
        tolerance=float(args.get("tolerance", 1e-9)),
        max_steps=int(args.get("max_steps", 1_000_000)),
        jacobian_mode=args.get("jacobian_mode", "variational"),
    )


def _resolution(scenario: Scenario, args: dict):
    res = args.get("resolution", 400 if scenario.region.dimension == 1 else 100)
    return tuple(res) if isinstance(res, (list, tuple)) else (int(res),) * scenario.region.dimension


def _quad(args: dict) -> QuadratureAlongFlow:
    if "substeps" in args:
        return QuadratureAlongFlow(substeps=int(args["substeps"]))
    return QuadratureAlongFlow()


def _sampled(scenario: Scenario, args: dict, slot: str):
    name = args[slot]
    return sample(scenario.functions[name], scenario.region, _resolution(scenario, args))


def execute_check(scenario: Scenario, check: CheckSpec):
    """Run one check and return its report."""
    args = check.args
    cfg = _integrator(args)
    kind = check.kind
    ts = list(check.t_sequence)
    thr = check.threshold
    sub = scenario.region.sub

    if kind == "main_equivalence":
        f = _sampled(scenario, args, "f")
        g = _sampled(scenario, args, "g")
        return theorems.verify_main_equivalence(
            f, g, scenario.fields[args["field"]], sub, ts, cfg, thr,
            h_div=float(args.get("h_div", 1e-4)),
            bump_per_axis=int(args.get("bump_per_axis", 3)),
            quad=_quad(args))
    if kind == "dq_distribution_limit":
        f = _sampled(scenario, args, "f")
        u = TestFunction(tuple(args["bump_center"]), float(args["bump_radius"]))
        return theorems.verify_dq_distribution_limit(
            f, scenario.fields[args["field"]], u, ts, cfg, thr,
            h_div=float(args.get("h_div", 1e-4)))
    if kind == "jacobian_bounds":
        return theorems.verify_jacobian_bounds(
            scenario.fields[args["field"]], args["points"], ts, cfg, thr)
    if kind == "weakstar_divergence":
        res = _resolution(scenario, args)
        u_family = [sample(TestFunction(tuple(b["center"]), float(b["radius"])),
                           scenario.region, res)
                    for b in args["bumps"]]
        return theorems.verify_weakstar_divergence(
            scenario.fields[args["field"]], u_family, ts, cfg,
            float(args.get("h_div", 1e-4)), thr,
            bound_tolerance=float(args.get("bound_tolerance", 1e-6)))
    if kind == "semigroup":
        f = _sampled(scenario, args, "f")
        return theorems.verify_semigroup(
            scenario.fields[args["field"]], f,
            [tuple(p) for p in args["s_t_pairs"]], ts, cfg, thr,
            group_tolerance=args.get("group_tolerance"),
            norm_tolerance=float(args.get("norm_tolerance", 1e-6)),
            subregion=sub)
    if kind == "commutation":
        f = _sampled(scenario, args, "f")
        return theorems.verify_commutation(
            f, scenario.fields[args["field"]], ts, args["h_values"],
            _quad(args), cfg, thr, subregion=sub)
    if kind == "upper_gradient":
        f = _sampled(scenario, args, "f")
        h = _sampled(scenario, args, "h")
        return theorems.verify_upper_gradient(
            f, h, scenario.fields[args["field"]], args["trajectory_points"],
            ts, _quad(args), cfg, thr, subregion=sub,
            recon_resolution=args.get("recon_resolution"),
            bump_radius=args.get("bump_radius"),
            h_div=float(args.get("h_div", 1e-4)),
            refine=args.get("refine"))
    if kind == "system":
        f = _sampled(scenario, args, "f")
        h = _sampled(scenario, args, "h")
        flds = [scenario.fields[name] for name in args["fields"]]
        coeffs = theorems.random_unit_ball(
            len(flds), int(args.get("coefficient_count", 32)),
            int(args.get("seed", 0)))
        return theorems.verify_system(
            f, flds, h, coeffs, cfg, ts, quad=_quad(args), threshold=thr,
            subregion=sub, recon_resolution=args.get("recon_resolution"),
            bump_radius=args.get("bump_radius"),
            h_div=float(args.get("h_div", 1e-4)), refine=args.get("refine"))
    if kind == "cutoff_localization":
        f = _sampled(scenario, args, "f")
        g = _sampled(scenario, args, "g")
        base = scenario.fields[args["field"]]
        cutoff = make_cutoff_field(base, args["cutoff_center"],
                                   float(args["cutoff_radius"]))
        return theorems.verify_cutoff_localization(
            f, g, base, cutoff, args["trajectory_points"], _quad(args), cfg,
            t=float(args.get("t", ts[0])), threshold=thr,
            h_div=float(args.get("h_div", 1e-4)),
            bump_per_axis=int(args.get("bump_per_axis", 2)))
    if kind == "lebesgue_points":
        f = _sampled(scenario, args, "f")
        return theorems.lebesgue_point_check(
            f, scenario.fields[args["field"]], args["points"], ts, _quad(args),
            cfg, thr, exceptional=args.get("exceptional", ()))
    if kind == "uniform_integrability":
        res = _resolution(scenario, args)
        family = []
        for name in args.get("functions", ()):
            family.append(sample(scenario.functions[name], scenario.region, res))
        if "dq_of" in args:
            from .calculus import difference_quotient
            base = sample(scenario.functions[args["dq_of"]], scenario.region, res)
            field = scenario.fields[args["field"]]
            for t in args.get("t_values", ts):
                family.append(difference_quotient(base, field, float(t), cfg))
        return theorems.uniform_integrability_diagnostic(family, ts)
    raise ScenarioError(f"unknown check kind {kind!r}")


@dataclass
class CheckResult:
    name: str
    kind: str
    report: Optional[object]
    error: Optional[str]

    @property
    def verdict(self) -> str:
        if self.error is not None:
            return "error"
        return self.report.verdict

    @property
    def passed(self) -> bool:
        return self.error is None and self.report.passed


def _check_names(checks) -> List[str]:
    names = []
    seen = {}
    for check in checks:
        seen[check.kind] = seen.get(check.kind, 0) + 1
        names.append(check.kind if seen[check.kind] == 1 else
                     f"{check.kind}_{seen[check.kind]}")
    return names


def run_scenario(scenario: Scenario, out_dir=None, jobs: int = 1,
                 tol_scale: float = 1.0, plots: bool = True) -> List[CheckResult]:
    """Execute all checks, write reports, print the summary table.

    Returns the per-check results in declaration order; the process exit
    status is 0 iff every verdict is a pass.
    """
    out = Path(out_dir if out_dir is not None else scenario.output)
    names = _check_names(scenario.checks)

    def run_one(check: CheckSpec):
        scaled = CheckSpec(check.kind, check.args, check.t_sequence,
                           check.threshold * tol_scale)
        return execute_check(scenario, scaled)

    results: List[CheckResult] = []
    if jobs > 1 and len(scenario.checks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_one, c) for c in scenario.checks]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append((fut.result(), None))
                except LipflowError as err:
                    outcomes.append((None, str(err)))
    else:
        outcomes = []
        for check in scenario.checks:
            try:
                outcomes.append((run_one(check), None))
            except LipflowError as err:
                outcomes.append((None, str(err)))

    if scenario.checks:
        out.mkdir(parents=True, exist_ok=True)
    for name, check, (report, error) in zip(names, scenario.checks, outcomes):
        results.append(CheckResult(name, check.kind, report, error))
        if report is None:
            continue
        base = out / f"{scenario.name}__{name}"
        theorems.write_report_json(report, base.with_suffix(".json"))
        theorems.write_report_csv(report, base.with_suffix(".csv"))
        if plots:
            from .plots import render_report_png
            render_report_png(report.to_dict(), base.with_suffix(".png"))

    width = max([len(r.name) for r in results], default=10)
    header = f"{'check':<{width}}  {'final error':>12}  {'threshold':>12}  verdict"
    print(header)
    print("-" * len(header))
    for res in results:
        if res.error is not None:
            print(f"{res.name:<{width}}  {'-':>12}  {'-':>12}  error ({res.error})")
        elif isinstance(res.report, theorems.DiagnosticReport):
            print(f"{res.name:<{width}}  {'-':>12}  {'-':>12}  diagnostic")
        else:
            print(f"{res.name:<{width}}  {res.report.final_error:>12.4g}  "
                  f"{res.report.threshold:>12.4g}  {res.report.verdict}")
    return results


def exit_code(results: List[CheckResult]) -> int:
    return 0 if all(r.passed for r in results) else 1


def builtin_scenario_names() -> List[str]:
    folder = Path(__file__).parent / "scenarios"
    return sorted(p.stem for p in folder.glob("*.json"))


def builtin_scenario_path(name: str) -> Path:
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.exists():
        raise ScenarioError(
            f"no shipped scenario {name!r}; available: {builtin_scenario_names()}")
    return path
