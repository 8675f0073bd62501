"""
Nonlocal integration by parts, Green and divergence identities on a ball D,
and the mean-value experiments.

With (-Δ)^s normalized by C = C_{n,s} and N_s^D f(x) = ∫_D (f(x)-f(y)) |x-y|^(-n-2s) dy,

    (C/2) ∬_{R^2n \\ (D^c)^2} (f(x)-f(y))(g(x)-g(y)) |x-y|^(-n-2s)
        = ∫_D g (-Δ)^s f + ∫_{D^c} g C N_s^D f.

Integrals over D and over its complement are taken in polar coordinates
about the center of D.
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from nonlocal_acf.core.errors import ParameterError
from nonlocal_acf.core.parallel import ordered_map
from nonlocal_acf.models.fields import Ball, ScalarField, TailEnvelope, VectorField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.models.results import OperatorValue
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services import quadrature_service as quad
from nonlocal_acf.services.field_catalog import build_field

logger = logging.getLogger(__name__)

PointFunction = Callable[[np.ndarray], float]


def _polar_nodes(center: np.ndarray, rho: np.ndarray, w: np.ndarray, spec: QuadratureSpec):
    n = center.size
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    points = center[None, :] + np.repeat(dirs, len(rho), axis=0) * np.tile(rho, len(dirs))[:, None]
    weights = (wdirs[:, None] * (w * rho ** (n - 1))[None, :]).ravel()
    return points, weights


def _sum_points(F: PointFunction, points: np.ndarray, weights: np.ndarray, jobs: int) -> float:
    values = ordered_map(F, list(points), jobs)
    return float(np.asarray(values) @ weights) if len(values) else 0.0


def _interior_breaks(D: Ball, fields: Sequence[ScalarField]):
    c = np.asarray(D.center)
    radii = [b.radius for f in fields for b in tuple(f.interfaces) + tuple(f.supports)
             if np.allclose(b.center, c)]
    return radii, min([f.length_scale for f in fields] + [D.radius])


def ball_integral(F: PointFunction, D: Ball, fields: Sequence[ScalarField], spec: QuadratureSpec,
                  jobs: int = 1) -> OperatorValue:
    """∫_D F(x) dx, F evaluated one point at a time."""
    c = np.asarray(D.center)
    breaks, scale = _interior_breaks(D, fields)

    def compute(m):
        rho, w = quad.build_rule(0.0, D.radius, spec, m, interior=breaks,
                                 max_width=spec.resolution * scale)
        return _sum_points(F, *_polar_nodes(c, rho, w, spec), jobs)

    value = compute(spec.nodes_per_panel)
    coarse = compute(spec.coarse().nodes_per_panel)
    return OperatorValue(value, abs(value - coarse), D.radius)


def exterior_integral(F: PointFunction, D: Ball, fields: Sequence[ScalarField], envelope: TailEnvelope,
                      params: FracParams, spec: QuadratureSpec, asymptotic: float = 0.0,
                      jobs: int = 1) -> OperatorValue:
    """∫_{D^c} F(x) dx with |F(x)| <= envelope(|x - center|).

    `asymptotic` is the coefficient k of F ~ k |x|^(-n-2s); when given, the
    truncated tail is added in closed form instead of only being bounded.
    """
    n, s = params.n, params.s
    c = np.asarray(D.center)
    R = D.radius
    if envelope.compact:
        T = max(R, envelope.radius)
        tail = 0.0
    else:
        T = max(2.0 * R, quad.truncation_radius(envelope, 0.0, spec.tail_tol, n))
        tail = quad.tail_bound(envelope, 0.0, T, n)
    breaks = [b.radius for f in fields for b in tuple(f.interfaces) + tuple(f.supports)
              if np.allclose(b.center, c) and R < b.radius < T]
    scale = min([f.length_scale for f in fields] + [R])
    beta = min(0.0, 1.0 - 2.0 * s)

    def compute(m):
        near = quad.build_rule(R, min(2.0 * R, T), spec, m, beta_a=beta if beta < 0 else None,
                               interior=[b for b in breaks if b < 2.0 * R],
                               max_width=spec.resolution * scale,
                               min_width=spec.derived_min_scale * scale)
        rho, w = near
        if T > 2.0 * R:
            knots = [quad.geometric_knots(2.0 * R, T, quad.far_panel_count(2.0 * R, T, spec))]
            dense = min(T, 2.0 * R + max([R] + breaks))
            knots.append(np.linspace(2.0 * R, dense, int(math.ceil((dense - 2.0 * R) / (spec.resolution * scale))) + 1))
            far = quad.panel_rule(np.unique(np.concatenate(knots + [np.array(breaks)])
                                            .clip(2.0 * R, T)), m)
            rho, w = np.concatenate([rho, far[0]]), np.concatenate([w, far[1]])
        return _sum_points(F, *_polar_nodes(c, rho, w, spec), jobs)

    value = compute(spec.nodes_per_panel)
    coarse = compute(spec.coarse().nodes_per_panel)
    error = abs(value - coarse) + tail
    if asymptotic and not envelope.compact:
        correction = asymptotic * params.surface_area * T ** (-2.0 * s) / (2.0 * s)
        value += correction
        error += abs(correction) * (n + 2.0 * s) * R / T
    return OperatorValue(value, error, T)


def _normal_envelope(f: ScalarField, D: Ball, params: FracParams, spec: QuadratureSpec) -> TailEnvelope:
    """|C N_s^D f(x)| <= C 2^(n+2s) (|f(x)| ∫_D 1 + ∫_D |f|) |x|^(-n-2s) for |x - c| >= 2R."""
    n, s = params.n, params.s
    mass = ball_integral(lambda y: abs(float(f(y[None, :])[0])), D, [f], spec).scalar
    volume = params.omega_n * D.radius ** n
    bound = mass + volume * (0.0 if f.tail.compact else f.tail.amplitude * (2.0 * D.radius) ** (-f.tail.power))
    return TailEnvelope(params.c_ns * 2.0 ** (n + 2.0 * s) * bound, n + 2.0 * s, 2.0 * D.radius)


def _product(a: TailEnvelope, b: TailEnvelope) -> TailEnvelope:
    if a.compact or b.compact:
        radius = min(r.radius for r in (a, b) if r.compact)
        return TailEnvelope(0.0, math.inf, radius)
    return TailEnvelope(a.amplitude * b.amplitude, a.power + b.power, max(a.radius, b.radius))


def _sup_outside(f: ScalarField, radius: float) -> float:
    """Bound on |f(x)| for |x| >= radius, from the declared envelope."""
    if f.tail.compact:
        return 0.0 if f.extent <= radius else f.tail.amplitude
    return f.tail.amplitude * max(radius, f.tail.radius) ** (-f.tail.power)


def _sum_envelope(a: TailEnvelope, b: TailEnvelope) -> TailEnvelope:
    if a.compact and b.compact:
        return TailEnvelope(0.0, math.inf, max(a.radius, b.radius))
    if a.compact or b.compact:
        wide = b if a.compact else a
        return TailEnvelope(wide.amplitude, wide.power, max(a.radius, b.radius))
    return TailEnvelope(a.amplitude + b.amplitude, min(a.power, b.power), max(a.radius, b.radius))


def _normal_times(weight: ScalarField, f: ScalarField, D: Ball, params: FracParams,
                  spec: QuadratureSpec) -> PointFunction:
    """x -> weight(x) C N_s^D f(x), zero where the weight vanishes."""
    def F(x):
        wx = float(weight(x[None, :])[0])
        if wx == 0.0:
            return 0.0
        return wx * params.c_ns * ops.nonlocal_normal(f, D, x, params, spec, estimate=False).scalar
    return F


def _record(lhs: OperatorValue, rhs: OperatorValue, **extra) -> Dict:
    residual = lhs.scalar - rhs.scalar
    scale = max(abs(lhs.scalar), abs(rhs.scalar))
    return {
        "lhs": lhs.scalar, "rhs": rhs.scalar,
        "lhs_error": lhs.abs_error_estimate, "rhs_error": rhs.abs_error_estimate,
        "residual": residual,
        "relative_residual": abs(residual) / scale if scale > 0 else 0.0,
        **extra,
    }


def _require_center_ball(D: Ball, params: FracParams):
    if D.dim != params.n:
        raise ParameterError("domain dimension does not match params", module="operators",
                             context={"dim": D.dim, "n": params.n})


def parts_residual(f: ScalarField, g: ScalarField, D: Ball, params: FracParams, spec: QuadratureSpec,
                   jobs: int = 1) -> Dict:
    """Both sides of the nonlocal integration-by-parts formula on D."""
    _require_center_ball(D, params)
    n, s, C = params.n, params.s, params.c_ns
    R = D.radius
    lap_f = ops.frac_laplacian_field(f, params, spec)

    # (D x R^n) piece: half the polarized energy density integrated over D
    inner = ball_integral(
        lambda x: 0.5 * ops.energy_pair(f, g, x, params, spec, estimate=False).scalar, D, [f, g], spec, jobs)

    def cross(x):
        fx, gx = float(f(x[None, :])[0]), float(g(x[None, :])[0])
        value = ops.exterior_chord_integral(
            x, D, lambda x0, y: (fx - f(y)) * (gx - g(y)), [f, g], params, spec, estimate=False)
        return 0.5 * C * value.scalar

    f_out, g_out = _sup_outside(f, 2.0 * R), _sup_outside(g, 2.0 * R)
    mass = ball_integral(
        lambda y: (abs(float(f(y[None, :])[0])) + f_out) * (abs(float(g(y[None, :])[0])) + g_out), D, [f, g], spec,
    ).scalar
    cross_envelope = TailEnvelope(0.5 * C * 2.0 ** (n + 2.0 * s) * mass, n + 2.0 * s, 2.0 * R)
    # far from D the cross term behaves like (C/2) |x|^(-n-2s) ∫_D f g
    asymptotic = 0.0
    if all(h.tail.compact or h.tail.power > 0 for h in (f, g)):
        asymptotic = 0.5 * C * ball_integral(
            lambda y: float(f(y[None, :])[0] * g(y[None, :])[0]), D, [f, g], spec).scalar
    outer = exterior_integral(cross, D, [f, g], cross_envelope, params, spec, asymptotic=asymptotic, jobs=jobs)
    lhs = OperatorValue(inner.scalar + outer.scalar, inner.abs_error_estimate + outer.abs_error_estimate)

    volume = ball_integral(lambda x: float(g(x[None, :])[0] * lap_f(x[None, :])[0]), D, [f, g], spec, jobs)
    boundary = exterior_integral(_normal_times(g, f, D, params, spec), D, [f, g],
                                 _product(_normal_envelope(f, D, params, spec), g.tail), params, spec, jobs=jobs)
    rhs = OperatorValue(volume.scalar + boundary.scalar, volume.abs_error_estimate + boundary.abs_error_estimate)
    logger.info("parts identity on B_%s: lhs=%.10g rhs=%.10g", R, lhs.scalar, rhs.scalar)
    return _record(lhs, rhs, identity="parts")


def green_residual(f: ScalarField, g: ScalarField, D: Ball, params: FracParams, spec: QuadratureSpec,
                   jobs: int = 1) -> Dict:
    """∫_D (f (-Δ)^s g - g (-Δ)^s f) against ∫_{D^c} (g C N f - f C N g)."""
    _require_center_ball(D, params)
    lap_f = ops.frac_laplacian_field(f, params, spec)
    lap_g = ops.frac_laplacian_field(g, params, spec)

    def volume_term(x):
        p = x[None, :]
        return float(f(p)[0] * lap_g(p)[0] - g(p)[0] * lap_f(p)[0])

    lhs = ball_integral(volume_term, D, [f, g], spec, jobs)
    gf = _normal_times(g, f, D, params, spec)
    fg = _normal_times(f, g, D, params, spec)
    envelope = _sum_envelope(_product(_normal_envelope(f, D, params, spec), g.tail),
                             _product(_normal_envelope(g, D, params, spec), f.tail))
    rhs = exterior_integral(lambda x: gf(x) - fg(x), D, [f, g], envelope, params, spec, jobs=jobs)
    logger.info("Green identity on B_%s: lhs=%.10g rhs=%.10g", D.radius, lhs.scalar, rhs.scalar)
    return _record(lhs, rhs, identity="green")


def divergence_residual(f: ScalarField, D: Ball, params: FracParams, spec: QuadratureSpec,
                        jobs: int = 1) -> Dict:
    """∫_D -(-Δ)^s f against ∫_{D^c} C N_s^D f, for f supported in D."""
    _require_center_ball(D, params)
    if not f.tail.compact or f.extent > D.radius:
        raise ParameterError("divergence identity needs f supported in D", module="operators",
                             context={"field": f.field_id, "radius": D.radius})
    lap_f = ops.frac_laplacian_field(f, params, spec)
    lhs = ball_integral(lambda x: -float(lap_f(x[None, :])[0]), D, [f], spec, jobs)
    mass = ball_integral(lambda y: float(f(y[None, :])[0]), D, [f], spec).scalar
    rhs = exterior_integral(
        lambda x: params.c_ns * ops.nonlocal_normal(f, D, x, params, spec, estimate=False).scalar,
        D, [f], _normal_envelope(f, D, params, spec), params, spec,
        asymptotic=-params.c_ns * mass, jobs=jobs,
    )
    logger.info("divergence identity on B_%s: lhs=%.10g rhs=%.10g", D.radius, lhs.scalar, rhs.scalar)
    return _record(lhs, rhs, identity="divergence")


def duality_residual(f: ScalarField, phi: VectorField, D: Ball, params: FracParams, spec: QuadratureSpec,
                     jobs: int = 1) -> Dict:
    """∫ f div^s phi against -∫ phi · ∇^s f, both fields supported inside D."""
    _require_center_ball(D, params)
    for h in (f, *phi.components):
        if not h.compact or h.extent > D.radius:
            raise ParameterError("duality needs fields supported inside the ball", module="operators",
                                 context={"field": h.field_id, "radius": D.radius})
    fields = [f, *phi.components]

    def divergence_term(x):
        return float(f(x[None, :])[0]) * ops.frac_divergence(phi, x, params, spec, estimate=False).scalar

    def gradient_term(x):
        grad = np.asarray(ops.frac_gradient(f, x, params, spec, estimate=False).value, dtype=float)
        return float(np.dot(phi(x[None, :])[0], grad))

    lhs = ball_integral(divergence_term, D, fields, spec, jobs)
    raw = ball_integral(gradient_term, D, fields, spec, jobs)
    rhs = OperatorValue(-raw.scalar, raw.abs_error_estimate, raw.truncation_radius_used)
    logger.info("duality on B_%s: lhs=%.10g rhs=%.10g", D.radius, lhs.scalar, rhs.scalar)
    return _record(lhs, rhs, identity="duality")


def greens_experiment(f: ScalarField, g: ScalarField, D: Ball, params: FracParams, spec: QuadratureSpec,
                      jobs: int = 1) -> Dict:
    records = [parts_residual(f, g, D, params, spec, jobs), green_residual(f, g, D, params, spec, jobs)]
    if f.tail.compact and f.extent <= D.radius:
        records.append(divergence_residual(f, D, params, spec, jobs))
    return {"rows": records, "max_relative_residual": max(r["relative_residual"] for r in records)}


# ---- Mean-value experiments ----

def mean_normalization(params: FracParams, r: float, spec: QuadratureSpec) -> OperatorValue:
    """∫ A^s_r = M_s(1, r)(0); equals 1."""
    one = build_field("constant:c=1", params, spec)
    return ops.s_mean(one, np.zeros(params.n), r, params, spec)


def poisson_residuals(u: ScalarField, params: FracParams, spec: QuadratureSpec, count: int = 5,
                      jobs: int = 1) -> Dict:
    """(-Δ)^s u at interior points of the construction ball, relative to sup |g| there."""
    ball: Ball = u.metadata["ball"]
    g: ScalarField = u.metadata["g"]
    n = params.n
    offsets = np.linspace(-0.6, 0.6, count) * ball.radius
    points = np.zeros((count, n))
    points[:, 0] = offsets
    values = ordered_map(lambda p: ops.frac_laplacian(u, p, params, spec), list(points), jobs)
    samples = np.linspace(ball.radius, 4.0 * ball.radius, 64)[:, None] * np.eye(n)[0][None, :]
    g_sup = float(np.max(np.abs(g(np.concatenate([samples, -samples])))))
    residuals = [abs(v.scalar) for v in values]
    return {
        "points": points.tolist(),
        "values": [v.scalar for v in values],
        "error_estimates": [v.abs_error_estimate for v in values],
        "g_sup": g_sup,
        "max_relative_residual": max(residuals) / g_sup if g_sup > 0 else max(residuals),
    }


def mean_value_property(u: ScalarField, params: FracParams, spec: QuadratureSpec,
                        fractions: Sequence[float] = (0.25, 0.5, 0.75), jobs: int = 1) -> Dict:
    """M_s(u, ρ)(0) against u(0) for ρ below the s-harmonicity radius of u."""
    ball: Ball = u.metadata["ball"]
    origin = np.zeros(params.n)
    u0 = float(u(origin[None, :])[0])
    rows = []
    for frac, m in zip(fractions, ordered_map(
            lambda f: ops.s_mean(u, origin, f * ball.radius, params, spec), fractions, jobs)):
        rows.append({"rho": frac * ball.radius, "mean": m.scalar, "u0": u0,
                     "abs_diff": abs(m.scalar - u0), "error_estimate": m.abs_error_estimate})
    return {"rows": rows, "max_abs_diff": max(r["abs_diff"] for r in rows)}


def radial_mean_monotonicity(g: ScalarField, params: FracParams, spec: QuadratureSpec,
                             radii: Optional[Sequence[float]] = None, jobs: int = 1) -> Dict:
    """r -> M_s(g, r)(0) on a grid, after sampling the sign of (-Δ)^s g on the largest ball."""
    radii = list(radii) if radii is not None else list(np.linspace(0.05, 0.5, 10))
    n = params.n
    origin = np.zeros(n)
    samples = np.linspace(-max(radii), max(radii), 9)
    points = np.zeros((9, n))
    points[:, 0] = samples
    signs = ordered_map(lambda p: ops.frac_laplacian(g, p, params, spec), list(points), jobs)
    worst = max(v.scalar for v in signs)
    tolerance = 10.0 * max(v.abs_error_estimate for v in signs)
    if worst <= tolerance:
        direction, description = 1.0, "subharmonic"
    elif min(v.scalar for v in signs) >= -tolerance:
        direction, description = -1.0, "superharmonic"
    else:
        direction, description = 0.0, "indefinite"
    means = ordered_map(lambda r: ops.s_mean(g, origin, r, params, spec), radii, jobs)
    values = [m.scalar for m in means]
    errors = [m.abs_error_estimate for m in means]
    defect = 0.0
    if direction:
        for a, b, ea, eb in zip(values, values[1:], errors, errors[1:]):
            defect = max(defect, max(direction * (a - b), 0.0) - ea - eb)
    return {
        "radii": [float(r) for r in radii],
        "values": values,
        "error_estimates": errors,
        "sign": description,
        "precondition_values": [v.scalar for v in signs],
        "monotone": direction != 0.0 and defect <= 0.0,
    }


def mean_value_experiment(params: FracParams, spec: QuadratureSpec, poisson_id: str = "poisson:r=1;g=gaussian:w=1",
                          sub_id: str = "times:c=-1;gaussian:w=1", jobs: int = 1) -> Dict:
    u = build_field(poisson_id, params, spec)
    if "ball" not in u.metadata:
        raise ParameterError("mean-value experiment needs a Poisson-constructed field",
                             module="operators", context={"field": poisson_id})
    g = build_field(sub_id, params, spec)
    return {
        "normalization": [
            {"r": r, **mean_normalization(params, r, spec).to_dict()} for r in (0.5, 1.0, 2.0)
        ],
        "poisson": poisson_residuals(u, params, spec, jobs=jobs),
        "mean_value": mean_value_property(u, params, spec, jobs=jobs),
        "radial_monotonicity": radial_mean_monotonicity(g, params, spec, jobs=jobs),
    }
