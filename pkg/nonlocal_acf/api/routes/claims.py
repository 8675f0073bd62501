import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from nonlocal_acf.api.router import ClaimResult, ClaimRouter
from nonlocal_acf.api.schemas.experiment import ExperimentConfig
from nonlocal_acf.core.enums import ClaimId, FunctionalKind, Outcome
from nonlocal_acf.models.fields import Ball, ScalarField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.services import bochner_service as bochner
from nonlocal_acf.services import functional_service as functionals
from nonlocal_acf.services import identity_service as identities
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import build_field

logger = logging.getLogger(__name__)

# Create a router for the experiment claims
router = ClaimRouter(tags=["claims"])

DEFAULT_FIELD = "bump:r=1"
DEFAULT_R_GRID = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
DEFAULT_S_GRID = [0.6, 0.7, 0.8, 0.9, 0.95, 0.99]
DEFAULT_LAMBDAS = [0.5, 2.0, 5.0]
DEFAULT_BOUND_GRID = [0.1, 0.25, 0.5, 0.75, 1.0]
DEFAULT_GRADEST_RADII = [0.25, 0.5, 0.75]
ROUTE_RADII = [0.25, 0.5, 1.0]

HOLDER_ASSUMPTION = "G_u is assumed C^(2s+delta) near the evaluation points; this is not checked numerically"
L1S_ASSUMPTION = "G_u is assumed in L^1_s; for catalog fields this follows from the derived envelope"

CURVE_COLUMNS = ["R", "value", "error_estimate", "defect_or_target"]
STABILITY_COLUMNS = ["s", "value", "error_estimate", "defect_or_target"]
BOCHNER_COLUMNS = ["route", "point", "lhs", "term_cross", "term_square", "residual",
                   "relative_residual", "combined_error"]


# ---- Helpers ----

def _setup(config: ExperimentConfig):
    return make_params(config.n, config.s), config.quadrature_spec()


def _field(field_id: Optional[str], default: str, params: FracParams, spec: QuadratureSpec) -> ScalarField:
    return build_field(field_id or default, params, spec)


def _label(point: Sequence[float]) -> str:
    return " ".join(repr(float(c)) for c in point)


def _axis_points(n: int, offsets: Sequence[float]) -> List[List[float]]:
    return [[float(t)] + [0.0] * (n - 1) for t in offsets]


def _gate(checks: Dict[str, bool], precondition: bool = True) -> Outcome:
    """FAIL on any failed check; otherwise PASS unless a hypothesis was not met."""
    if not all(checks.values()):
        return Outcome.FAIL
    return Outcome.PASS if precondition else Outcome.HYPOTHESIS_NOT_MET


# ---- Monotonicity ----

def _monotonicity(config: ExperimentConfig, kind: FunctionalKind, inner_product: bool) -> ClaimResult:
    params, spec = _setup(config)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    curve = functionals.monotonicity_experiment(
        u, config.R_grid or DEFAULT_R_GRID, params, spec, kind=kind,
        inner_product=inner_product, jobs=config.jobs,
    )
    rows, previous = [], None
    for R, value, error in zip(curve.radii, curve.values, curve.error_estimates):
        drop = max(previous - value, 0.0) if previous is not None else 0.0
        rows.append({"R": R, "value": value, "error_estimate": error, "defect_or_target": drop})
        previous = value
    report = curve.precondition_report
    summary = {
        "monotonicity_defect": curve.monotonicity_defect,
        "summed_error": curve.summed_error,
        "monotone_prefix": curve.monotone_prefix,
        "precondition_satisfied": report.satisfied,
    }
    checks = {"defect_within_error": curve.monotonicity_defect <= 3.0 * curve.summed_error}
    return ClaimResult(_gate(checks, report.satisfied), summary, CURVE_COLUMNS, rows,
                       details={"precondition": report.to_dict()}, assumptions=[HOLDER_ASSUMPTION])


@router.claim(ClaimId.MONOTONICITY_G)
def monotonicity_G(config: ExperimentConfig) -> ClaimResult:
    """R -> J(u, R) for the energy density G_u."""
    return _monotonicity(config, FunctionalKind.G, inner_product=False)


@router.claim(ClaimId.MONOTONICITY_GRAD)
def monotonicity_grad(config: ExperimentConfig) -> ClaimResult:
    """R -> J(u, R) for |∇^s u|^2."""
    return _monotonicity(config, FunctionalKind.GRAD, inner_product=False)


@router.claim(ClaimId.MONOTONICITY_GRAD_F)
def monotonicity_grad_f(config: ExperimentConfig) -> ClaimResult:
    """|∇^s u|^2 variant whose hypothesis is <∇^s u, ∇^s (-Δ)^s u> <= 0."""
    return _monotonicity(config, FunctionalKind.GRAD, inner_product=True)


# ---- s -> 1 stability ----

def _stability(config: ExperimentConfig, kind: FunctionalKind) -> ClaimResult:
    spec = config.quadrature_spec()
    params = make_params(config.n, config.s)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    result = functionals.stability_experiment(
        u, config.R or 0.5, config.s_grid or DEFAULT_S_GRID, config.n, spec, kind=kind, jobs=config.jobs)
    rows = [{"s": r["s"], "value": r["value"], "error_estimate": r["error_estimate"],
             "defect_or_target": r["target"]} for r in result["rows"]]
    tolerance = 0.05 if result["target"] else 1e-6
    checks = {
        "tail_decreasing": result["tail_decreasing"],
        "extrapolation_close": result["extrapolation_rel_error"] <= tolerance,
    }
    summary = {k: result[k] for k in ("local_value", "target", "extrapolated", "extrapolation_rel_error",
                                      "tail_decreasing")}
    return ClaimResult(_gate(checks), summary, STABILITY_COLUMNS, rows,
                       details={"abs_diff": [r["abs_diff"] for r in result["rows"]]})


@router.claim(ClaimId.STABILITY_G)
def stability_G(config: ExperimentConfig) -> ClaimResult:
    return _stability(config, FunctionalKind.G)


@router.claim(ClaimId.STABILITY_GRAD)
def stability_grad(config: ExperimentConfig) -> ClaimResult:
    return _stability(config, FunctionalKind.GRAD)


# ---- Scaling and bounds ----

def _route_row(u: ScalarField, R: float, params: FracParams, spec: QuadratureSpec, jobs: int) -> Dict:
    """J through the exterior s-mean against J through the Kelvin-transformed mean."""
    exterior = functionals.j_acf(u, R, params, spec, jobs=jobs)
    kelvin = functionals.j_acf_kelvin(u, R, params, spec, jobs=jobs)
    scale = max(abs(exterior.scalar), abs(kelvin.scalar))
    diff = abs(exterior.scalar - kelvin.scalar)
    return {"R": R, "exterior": exterior.scalar, "kelvin": kelvin.scalar,
            "rel_diff": diff / scale if scale > 0 else 0.0,
            "error_estimate": exterior.abs_error_estimate + kelvin.abs_error_estimate}


@router.claim(ClaimId.SCALING)
def scaling(config: ExperimentConfig) -> ClaimResult:
    """J(u_λ, R/λ) = J(u, R) for both densities, the pointwise covariances,
    and agreement of the exterior and Kelvin routes for J."""
    params, spec = _setup(config)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    points = config.points if config.points is not None else _axis_points(config.n, [0.3])
    rows, details = [], {}
    for kind in FunctionalKind:
        result = functionals.scaling_experiment(
            u, config.R or 0.5, config.lambdas or DEFAULT_LAMBDAS, params, spec, kind=kind,
            points=points if kind == FunctionalKind.G else (), jobs=config.jobs)
        rows.extend({"kind": kind.value, **r} for r in result["rows"])
        details[kind.value] = {"base": result["base"], "max_rel_diff": result["max_rel_diff"]}
        if result["pointwise"]:
            details["pointwise"] = result["pointwise"]
    checks = {f"{k}_invariant": details[k]["max_rel_diff"] <= 1e-3 for k in ("G", "grad")}
    summary = {f"max_rel_diff_{k}": details[k]["max_rel_diff"] for k in ("G", "grad")}

    routes = [_route_row(u, R, params, spec, config.jobs) for R in ROUTE_RADII]
    details["routes"] = routes
    summary["max_route_rel_diff"] = max(r["rel_diff"] for r in routes)
    checks["routes_agree"] = summary["max_route_rel_diff"] <= 1e-3
    columns = ["kind", "lambda", "value", "reference", "rel_diff", "error_estimate"]
    return ClaimResult(_gate(checks), summary, columns, rows, details=details)


@router.claim(ClaimId.BOUND)
def bound(config: ExperimentConfig) -> ClaimResult:
    """ρ(R) = J R^(2s) / ∫ D |x|^(2s-n) for both densities; only boundedness is asserted."""
    params, spec = _setup(config)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    rows, summary, checks = [], {}, {}
    for kind in FunctionalKind:
        result = functionals.acf_bound_experiment(
            u, config.R_grid or DEFAULT_BOUND_GRID, params, spec, kind=kind,
            check_doubling=config.check_doubling, jobs=config.jobs)
        rows.extend({"kind": kind.value, **r} for r in result["rows"])
        summary[f"max_ratio_{kind.value}"] = result["max_ratio"]
        checks[f"{kind.value}_finite"] = math.isfinite(result["max_ratio"])
        if config.check_doubling:
            summary[f"doubling_rel_change_{kind.value}"] = result["doubling_rel_change"]
            checks[f"{kind.value}_stable"] = result["stable"]
    columns = ["kind", "R", "value", "error_estimate", "weighted_integral", "ratio"]
    return ClaimResult(_gate(checks), summary, columns, rows, assumptions=[L1S_ASSUMPTION])


@router.claim(ClaimId.GRADEST)
def gradest(config: ExperimentConfig) -> ClaimResult:
    """G_u(0) against (u(0)^2 + ‖u‖‖f‖) / R^(2s)."""
    params, spec = _setup(config)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    result = functionals.gradient_estimate_experiment(
        u, params, spec, R_values=config.R_grid or DEFAULT_GRADEST_RADII, jobs=config.jobs)
    precondition = result["precondition"]["satisfied"]
    checks = {
        "finite": result["finite"],
        "normalization_invariant": result["normalization_rel_change"] <= 1e-6,
        "doubling_stable": result["doubling_rel_change"] <= 0.1,
        "mean_value_lower_bound": all(r["holds"] for r in result["mean_value_lower_bound"]),
    }
    summary = {k: result[k] for k in ("max_ratio", "finite", "normalization_rel_change",
                                      "doubling_rel_change", "u_sup", "f_sup")}
    summary["precondition_satisfied"] = precondition
    details = {"G0": result["G0"], "precondition": result["precondition"],
               "mean_value_lower_bound": result["mean_value_lower_bound"]}
    return ClaimResult(_gate(checks, precondition), summary, ["R", "G0", "ratio"], result["rows"],
                       details=details, assumptions=[HOLDER_ASSUMPTION])


# ---- Bochner identities ----

def _bochner_row(route: str, point: Sequence[float], record: Dict) -> Dict:
    return {"route": route, "point": _label(point), **{k: record[k] for k in BOCHNER_COLUMNS[2:]}}


def _within(record: Dict, rel: float) -> bool:
    return record["relative_residual"] <= rel or abs(record["residual"]) <= record["combined_error"]


@router.claim(ClaimId.BOCHNER_G)
def bochner_G(config: ExperimentConfig) -> ClaimResult:
    """(-Δ)^s G_u = 2<u, (-Δ)^s u> - square term at sample points.

    A Poisson-constructed field instead runs the s-harmonic bridge check.
    """
    params, spec = _setup(config)
    field_id = config.field or DEFAULT_FIELD
    u = build_field(field_id, params, spec)
    points = config.points if config.points is not None else _axis_points(config.n, [0.0, 0.3, -0.5])
    rows, checks, extra = [], {}, []
    bridge = "ball" in u.metadata
    for p in points:
        if bridge:
            record = bochner.subharmonic_bridge_check(u, p, params, spec)
            checks[f"bridge {_label(p)}"] = record["holds"]
            rows.append(_bochner_row("bridge", p, record))
            continue
        residual = bochner.bochner_residual_G(u, p, params, spec, monte_carlo=config.monte_carlo,
                                              samples=config.mc_samples, seed=config.seed)
        record = residual.to_dict()
        checks[f"residual {_label(p)}"] = _within(record, 5e-2)
        rows.append(_bochner_row("G", p, record))
        if config.monte_carlo:
            extra.append({"point": list(p), "term_square": record["term_square"],
                          "term_square_mc": record["term_square_mc"],
                          "term_square_mc_stderr": record["term_square_mc_stderr"]})
    summary = {"max_relative_residual": max((r["relative_residual"] for r in rows), default=0.0),
               "route": "bridge" if bridge else "G"}
    details = {"monte_carlo": extra} if extra else {}
    return ClaimResult(_gate(checks), summary, BOCHNER_COLUMNS, rows, details=details,
                       assumptions=[HOLDER_ASSUMPTION, L1S_ASSUMPTION])


@router.claim(ClaimId.BOCHNER_GRAD)
def bochner_grad(config: ExperimentConfig) -> ClaimResult:
    """Bochner identity for |∇^s u|^2, both routes, plus the commutation check."""
    params, spec = _setup(config)
    u = _field(config.field, DEFAULT_FIELD, params, spec)
    points = config.points if config.points is not None else _axis_points(config.n, [0.0, 0.3, -0.5])
    rows, checks = [], {}
    for p in points:
        for route, commuted in (("grad", False), ("grad-commuted", True)):
            record = bochner.bochner_residual_grad(u, p, params, spec, commuted=commuted).to_dict()
            rows.append(_bochner_row(route, p, record))
            if not commuted:
                checks[f"residual {_label(p)}"] = _within(record, 5e-2)
    commutation = bochner.commutation_check(
        u, _axis_points(config.n, np.linspace(-0.8, 0.8, 10)), params, spec, jobs=config.jobs)
    checks["commutation"] = commutation["max_relative_diff"] <= 1e-2
    summary = {
        "max_relative_residual": max(r["relative_residual"] for r in rows if r["route"] == "grad"),
        "max_commutation_relative_diff": commutation["max_relative_diff"],
    }
    return ClaimResult(_gate(checks), summary, BOCHNER_COLUMNS, rows,
                       details={"commutation": commutation}, assumptions=[HOLDER_ASSUMPTION])


@router.claim(ClaimId.LIMITS)
def limits(config: ExperimentConfig) -> ClaimResult:
    """Energy density, square term and mean-value kernel against their s -> 1 limits."""
    params, spec = _setup(config)
    u = _field(config.field, "gaussian:w=1", params, spec)
    v = build_field(config.field2, params, spec) if config.field2 else None
    x = config.points[0] if config.points else _axis_points(config.n, [0.3])[0]
    result = bochner.local_limit_check(u, x, config.s_grid or list(bochner.DEFAULT_LIMIT_GRID), spec,
                                       v=v, kernel_radius=config.R or 0.5)
    tolerances = {"inner_product": 0.05, "energy_density": 0.05, "square": 0.15, "kernel": 0.05}
    rows, checks, summary = [], {}, {}
    for name, tol in tolerances.items():
        block = result[name]
        rows.extend({"quantity": name, **r} for r in block["rows"])
        summary[f"{name}_final_relative_diff"] = block["final_relative_diff"]
        checks[f"{name}_close"] = block["final_relative_diff"] <= tol
        checks[f"{name}_decreasing"] = block["decreasing"]
    columns = ["quantity", "s", "value", "target", "abs_diff", "error_estimate"]
    return ClaimResult(_gate(checks), summary, columns, rows)


@router.claim(ClaimId.MOMENTS)
def moments(config: ExperimentConfig) -> ClaimResult:
    """Moment integrals over B_1, closed form against quadrature."""
    spec = config.quadrature_spec()
    table = bochner.moments_table(grid_s=config.s_grid or (0.25, 0.5, 0.75), spec=spec)
    rows = [{**r, "alpha": " ".join(str(a) for a in r["alpha"])} for r in table]
    checks = {"closed_form_agrees": all(r["rel_diff"] <= 1e-6 for r in table)}
    summary = {"entries": len(table), "max_rel_diff": max(r["rel_diff"] for r in table)}
    columns = ["n", "k", "alpha", "s", "closed_form", "quadrature", "monomial", "rel_diff"]
    return ClaimResult(_gate(checks), summary, columns, rows)


# ---- Green identities and mean values ----

@router.claim(ClaimId.GREENS)
def greens(config: ExperimentConfig) -> ClaimResult:
    """Integration by parts, Green's second identity and the divergence theorem on a ball."""
    params, spec = _setup(config)
    f = _field(config.field, "bump:r=0.8", params, spec)
    g = _field(config.field2, "shifted:a=0.3;bump:r=0.9", params, spec)
    D = Ball.centered(config.n, config.ball_radius)
    result = identities.greens_experiment(f, g, D, params, spec, jobs=config.jobs)
    checks = {r["identity"]: r["relative_residual"] <= 1e-3 for r in result["rows"]}
    columns = ["identity", "lhs", "rhs", "lhs_error", "rhs_error", "residual", "relative_residual"]
    summary = {"max_relative_residual": result["max_relative_residual"],
               "identities": [r["identity"] for r in result["rows"]]}
    return ClaimResult(_gate(checks), summary, columns, result["rows"])


@router.claim(ClaimId.MEANVALUE)
def meanvalue(config: ExperimentConfig) -> ClaimResult:
    """Poisson field residuals, the s-mean value property and radial monotonicity of M_s."""
    params, spec = _setup(config)
    result = identities.mean_value_experiment(
        params, spec,
        poisson_id=config.field or "poisson:r=1;g=gaussian:w=1",
        sub_id=config.field2 or "times:c=-1;gaussian:w=1",
        jobs=config.jobs,
    )
    rows = []
    for r in result["normalization"]:
        rows.append({"check": "normalization", "x": r["r"], "value": r["value"], "reference": 1.0,
                     "abs_diff": abs(r["value"] - 1.0), "error_estimate": r["error_estimate"]})
    poisson = result["poisson"]
    for p, v, e in zip(poisson["points"], poisson["values"], poisson["error_estimates"]):
        rows.append({"check": "poisson", "x": _label(p), "value": v, "reference": 0.0,
                     "abs_diff": abs(v), "error_estimate": e})
    mean_value = result["mean_value"]
    for r in mean_value["rows"]:
        rows.append({"check": "mean_value", "x": r["rho"], "value": r["mean"], "reference": r["u0"],
                     "abs_diff": r["abs_diff"], "error_estimate": r["error_estimate"]})
    radial = result["radial_monotonicity"]
    for rho, v, e in zip(radial["radii"], radial["values"], radial["error_estimates"]):
        rows.append({"check": "radial_mean", "x": rho, "value": v, "reference": None,
                     "abs_diff": None, "error_estimate": e})

    u0 = mean_value["rows"][0]["u0"] if mean_value["rows"] else 0.0
    sign_known = radial["sign"] != "indefinite"
    checks = {
        "normalization": all(abs(r["value"] - 1.0) <= 1e-6 for r in result["normalization"]),
        "poisson_interior": poisson["max_relative_residual"] <= 1e-3,
        "mean_value": mean_value["max_abs_diff"] <= 1e-3 * max(1.0, abs(u0)),
        "radial_monotone": radial["monotone"] or not sign_known,
    }
    summary = {
        "poisson_max_relative_residual": poisson["max_relative_residual"],
        "mean_value_max_abs_diff": mean_value["max_abs_diff"],
        "radial_sign": radial["sign"],
        "radial_monotone": radial["monotone"],
    }
    columns = ["check", "x", "value", "reference", "abs_diff", "error_estimate"]
    return ClaimResult(_gate(checks, sign_known), summary, columns, rows,
                       details={"radial_precondition": radial["precondition_values"]})
