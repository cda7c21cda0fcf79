"""Catalog of analytically solvable field/function instances.

Every entry carries a field (or system of fields), a function f, its
derivative along each field in closed form, the least upper gradient, and
notes on the analytic flow.  The catalog backs the CLI listing and seeds the
shipped scenarios; `validate_catalog` confirms each derivative against
trajectory residuals.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

from .calculus import QuadratureAlongFlow, lie_residual
from .errors import LipflowError
from .expr import parse
from .field import VectorField
from .flow import IntegratorConfig
from .grid import sample
from .region import Region


@dataclass(frozen=True)
class OracleEntry:
    name: str
    dimension: int
    lower: tuple
    upper: tuple
    sub_lower: tuple
    sub_upper: tuple
    fields: Tuple[Tuple[str, Tuple[str, ...], float], ...]  # (name, components, L)
    f_text: str
    g_texts: Tuple[str, ...]  # derivative along each field
    upper_gradient_text: str
    flow_note: str
    jacobian_note: str
    divergence_note: str
    sample_points: Tuple[Tuple[float, ...], ...]

    def region(self) -> Region:
        return Region(self.lower, self.upper,
                      sub=Region(self.sub_lower, self.sub_upper))

    def build_fields(self):
        region = self.region()
        return [VectorField.from_components(region, comps, lipschitz=lip, name=name)
                for name, comps, lip in self.fields]


CATALOG: Tuple[OracleEntry, ...] = (
    OracleEntry(
        name="translation",
        dimension=1,
        lower=(-2.0,), upper=(2.0,), sub_lower=(-0.5,), sub_upper=(0.5,),
        fields=(("translation", ("1",), 0.0),),
        f_text="abs(x0)",
        g_texts=("x0 / abs(x0)",),
        upper_gradient_text="1",
        flow_note="flow x + t; isometric, ratio bound e^{L|t|} = 1",
        jacobian_note="J_t = 1",
        divergence_note="div X = 0",
        sample_points=((-0.4,), (-0.1,), (0.2,), (0.45,)),
    ),
    OracleEntry(
        name="scaling",
        dimension=1,
        lower=(-4.0,), upper=(4.0,), sub_lower=(-1.0,), sub_upper=(1.0,),
        fields=(("scaling", ("x0",), 1.0),),
        f_text="x0^2",
        g_texts=("2*x0^2",),
        upper_gradient_text="2*x0^2",
        flow_note="flow x*e^t with L = 1; Gronwall and advance bounds attained",
        jacobian_note="J_t = e^t, attains the bound e^{nL|t|} at the top",
        divergence_note="div X = 1",
        sample_points=((-0.8,), (-0.25,), (0.3,), (0.9,)),
    ),
    OracleEntry(
        name="rotation",
        dimension=2,
        lower=(-1.0, -1.0), upper=(1.0, 1.0),
        sub_lower=(-0.5, -0.5), sub_upper=(0.5, 0.5),
        fields=(("rotation", ("-x1", "x0"), 1.0),),
        f_text="x0",
        g_texts=("-x1",),
        upper_gradient_text="abs(x1)",
        flow_note="flow rotates by angle t; L = 1, distances preserved",
        jacobian_note="J_t = 1 (volume preserving)",
        divergence_note="div X = 0",
        sample_points=((0.3, 0.1), (-0.2, 0.35), (0.0, -0.4)),
    ),
    OracleEntry(
        name="kink",
        dimension=1,
        lower=(-2.0,), upper=(2.0,), sub_lower=(-0.5,), sub_upper=(0.5,),
        fields=(("kink", ("abs(x0)",), 1.0),),
        f_text="x0",
        g_texts=("abs(x0)",),
        upper_gradient_text="abs(x0)",
        flow_note="flow x*e^t for x > 0, x*e^{-t} for x < 0, 0 fixed; "
                  "Lipschitz but not C^1",
        jacobian_note="J_t = e^{t sign(x)} away from 0",
        divergence_note="div X = sign(x) almost everywhere",
        sample_points=((-0.6,), (-0.2,), (0.25,), (0.5,)),
    ),
    OracleEntry(
        name="heisenberg",
        dimension=3,
        lower=(-1.0, -1.0, -1.0), upper=(1.0, 1.0, 1.0),
        sub_lower=(-0.5, -0.5, -0.5), sub_upper=(0.5, 0.5, 0.5),
        fields=(("heis1", ("1", "0", "-x1/2"), 0.5),
                ("heis2", ("0", "1", "x0/2"), 0.5)),
        f_text="x0",
        g_texts=("1", "0"),
        upper_gradient_text="1",
        flow_note="horizontal pair; flows are polynomial in t (degree 2), "
                  "so fixed-step RK4 integrates them exactly",
        jacobian_note="J_t = 1 for both fields",
        divergence_note="div X1 = div X2 = 0",
        sample_points=((0.2, -0.1, 0.0), (-0.3, 0.2, 0.1)),
    ),
)


def get_oracle(name: str) -> OracleEntry:
    for entry in CATALOG:
        if entry.name == name:
            return entry
    raise LipflowError(f"no oracle named {name!r}")


def validate_catalog(resolution: int = 400, t: float = 0.25,
                     tolerance: float = 5e-3) -> None:
    """Check lie residuals of every catalog (f, g) pair on its sample points."""
    cfg = IntegratorConfig(tolerance=1e-6)
    quad = QuadratureAlongFlow(substeps=64)
    for entry in CATALOG:
        region = entry.region()
        res = (resolution,) if entry.dimension == 1 else (24,) * entry.dimension
        f = sample(parse(entry.f_text, entry.dimension), region, res)
        for field, g_text in zip(entry.build_fields(), entry.g_texts):
            g = sample(parse(g_text, entry.dimension), region, res)
            for x in entry.sample_points:
                r = lie_residual(f, g, field, x, t, quad, cfg)
                if abs(r) > tolerance:
                    raise LipflowError(
                        f"oracle {entry.name}: residual {r:.3g} at {x} for "
                        f"field {field.name} exceeds {tolerance}"
                    )


def format_catalog() -> str:
    lines = []
    for entry in CATALOG:
        lines.append(f"{entry.name} (R^{entry.dimension})")
        for name, comps, lip in entry.fields:
            lines.append(f"  field {name}: ({', '.join(comps)})   L = {lip}")
        lines.append(f"  flow: {entry.flow_note}")
        lines.append(f"  jacobian: {entry.jacobian_note}")
        lines.append(f"  divergence: {entry.divergence_note}")
        lines.append(f"  f = {entry.f_text}")
        for (name, _, _), g in zip(entry.fields, entry.g_texts):
            lines.append(f"  {name} f = {g}")
        lines.append(f"  least upper gradient = {entry.upper_gradient_text}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"
