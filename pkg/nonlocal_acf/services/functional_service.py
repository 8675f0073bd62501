"""
ACF-type functionals and the experiments built on them.

    J(u, R) = R^(-1-s) ∫_0^R r^s M_s(D, r)(0) dr

with D = G_u (J^s_ACF) or D = |∇^s u|^2 (the gradient version). The outer
integral uses Gauss-Jacobi nodes for the weight r^s; the inner s-means are
taken on a cached derived field, either in exterior form or through the
Kelvin inversion y -> r^2 y / |y|^2.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from nonlocal_acf.core.enums import FunctionalKind, Regularity
from nonlocal_acf.core.errors import EvaluationError, FieldError, NonlocalACFError, ParameterError
from nonlocal_acf.core.parallel import ordered_map
from nonlocal_acf.models.fields import ScalarField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.models.results import FunctionalCurve, OperatorValue, PreconditionReport
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services import quadrature_service as quad
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import scaled_field, times_field

logger = logging.getLogger(__name__)

EXTERIOR = "exterior"
KELVIN = "kelvin"


def density_field(u: ScalarField, kind: FunctionalKind, params: FracParams,
                  spec: QuadratureSpec) -> ScalarField:
    if kind == FunctionalKind.G:
        return ops.energy_density_field(u, params, spec)
    return ops.gradient_norm_sq_field(u, params, spec)


# ---- Inner means ----

def kelvin_mean(g: ScalarField, r: float, params: FracParams, spec: QuadratureSpec,
                estimate: bool = True) -> OperatorValue:
    """M_s(g, r)(0) in interior form: a ∫_{B_r} (r^2 - |x|^2)^(-s) |x|^(2s-n) g(r^2 x/|x|^2) dx.

    Breakpoints are the exterior-form knots pulled back by ρ = r^2 / t, so
    features of g keep their resolution; Gauss nodes are placed in ρ.
    """
    if not r > 0:
        raise ParameterError("s-mean radius must be positive", module="functionals", context={"r": r})
    if g.singular:
        raise EvaluationError("s-mean requires a locally bounded field", context={"field": g.field_id})
    n, s, a = params.n, params.s, params.a_ns
    origin = np.zeros(n)
    _, tail = ops._tail(g.tail, n + 2.0 * s, n, spec.tail_tol)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    width = spec.resolution * min(g.length_scale, r)
    offsets, eps = quad.graded_offsets(r, spec, width, g.min_scale)

    def ray_knots(theta):
        t = [r + offsets]
        for hit in quad.interface_hits(origin, theta, g.interfaces):
            if r + eps < hit < 2.0 * r:
                t.append(quad.cluster_knots(hit, min(width, hit - r - eps, 2.0 * r - hit), spec))
        far, T_ray = quad.far_knots(origin, theta, [g], 2.0 * r, spec, n + 2.0 * s, n)
        t.append(far)
        t = np.unique(np.concatenate(t))
        t = t[t >= r + eps]
        return np.sort(r * r / t), T_ray

    def integrand(rho, theta):
        y = (r * r / rho)[:, None] * theta[None, :]
        return a * (r * r - rho ** 2) ** (-s) * rho ** (2.0 * s - 1.0) * ops._eval(g, y)

    rho_eps = r * r / (r + eps)
    edge_weight = (r - rho_eps) / (1.0 - s)

    def compute(m):
        total, T = 0.0, 0.0
        for theta, wt in zip(dirs, wdirs):
            knots, T_ray = ray_knots(theta)
            rho, w = quad.panel_rule(knots, m)
            edge = float(integrand(np.array([rho_eps]), theta)[0]) * edge_weight
            total += wt * (float(integrand(rho, theta) @ w) + edge)
            T = max(T, T_ray)
        return total, T, a * r ** (2.0 * s) * tail

    return ops._estimate(compute, spec, estimate)


def _mean_at(density: ScalarField, r: float, params: FracParams, spec: QuadratureSpec,
             route: str) -> OperatorValue:
    try:
        if route == KELVIN:
            return kelvin_mean(density, r, params, spec)
        return ops.s_mean(density, np.zeros(params.n), r, params, spec)
    except NonlocalACFError as exc:
        raise exc.with_context(radius=r) from exc


def _means(density: ScalarField, radii: Sequence[float], params: FracParams, spec: QuadratureSpec,
           route: str, jobs: int) -> List[OperatorValue]:
    return ordered_map(lambda r: _mean_at(density, r, params, spec, route), radii, jobs)


# ---- Functionals ----

def j_acf(u: ScalarField, R: float, params: FracParams, spec: QuadratureSpec,
          kind: FunctionalKind = FunctionalKind.G, route: str = EXTERIOR, jobs: int = 1) -> OperatorValue:
    """R^(-1-s) ∫_0^R r^s M_s(D, r)(0) dr = ∫_0^1 t^s M_s(D, R t)(0) dt."""
    if not R > 0:
        raise ParameterError("radius must be positive", module="functionals", context={"R": R})
    if route not in (EXTERIOR, KELVIN):
        raise ParameterError(f"unknown route '{route}'", module="functionals")
    density = density_field(u, kind, params, spec)
    t, w = quad.gauss_jacobi_weighted(spec.outer_nodes, params.s)
    tc, wc = quad.gauss_jacobi_weighted(spec.coarse().outer_nodes, params.s)
    means = _means(density, list(R * t) + list(R * tc), params, spec, route, jobs)
    full, coarse = means[:len(t)], means[len(t):]
    value = float(sum(wi * m.scalar for wi, m in zip(w, full)))
    coarse_value = float(sum(wi * m.scalar for wi, m in zip(wc, coarse)))
    inner_error = float(sum(wi * m.abs_error_estimate for wi, m in zip(w, full)))
    T = max(m.truncation_radius_used for m in full)
    logger.debug("J[%s, %s, %s](R=%s) = %.10g", kind.value, route, u.field_id, R, value)
    return OperatorValue(value, abs(value - coarse_value) + inner_error, T)


def j_acf_kelvin(u: ScalarField, R: float, params: FracParams, spec: QuadratureSpec,
                 kind: FunctionalKind = FunctionalKind.G, jobs: int = 1) -> OperatorValue:
    return j_acf(u, R, params, spec, kind=kind, route=KELVIN, jobs=jobs)


def j_acf_grad(u: ScalarField, R: float, params: FracParams, spec: QuadratureSpec,
               route: str = EXTERIOR, jobs: int = 1) -> OperatorValue:
    return j_acf(u, R, params, spec, kind=FunctionalKind.GRAD, route=route, jobs=jobs)


_DIFFERENTIABLE = {Regularity.C2, Regularity.C3, Regularity.C4, Regularity.SMOOTH_COMPACT}


def classical_gradient(u: ScalarField, points: np.ndarray) -> np.ndarray:
    """∇u from the oracle, else fourth-order central differences."""
    points = np.atleast_2d(points)
    if u.has_oracle("grad"):
        return np.asarray(u.oracle("grad")(points), dtype=float).reshape(points.shape)
    if u.regularity not in _DIFFERENTIABLE:
        raise FieldError("field is not declared differentiable and has no gradient oracle",
                         context={"field": u.field_id, "regularity": u.regularity.value})
    h = 1e-3 * u.length_scale
    out = np.empty_like(points)
    for i in range(u.dim):
        e = np.zeros(u.dim)
        e[i] = h
        out[:, i] = (-u(points + 2 * e) + 8 * u(points + e) - 8 * u(points - e) + u(points - 2 * e)) / (12 * h)
    return out


def j_acf_local(u: ScalarField, R: float, spec: QuadratureSpec) -> float:
    """(1/R^2) ∫_{B_R} |∇u|^2 |x|^(2-n) dx = (1/R^2) ∫_S ∫_0^R |∇u(ρθ)|^2 ρ dρ dθ."""
    if not R > 0:
        raise ParameterError("radius must be positive", module="functionals", context={"R": R})
    n = u.dim
    interior = [b.radius for b in u.interfaces if not any(b.center)]
    if u.compact:
        interior.append(u.extent)
    rho, w = quad.build_rule(0.0, R, spec, interior=interior,
                             max_width=spec.resolution * min(u.length_scale, R))
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    total = 0.0
    for theta, wt in zip(dirs, wdirs):
        grad = classical_gradient(u, rho[:, None] * theta[None, :])
        total += wt * float((np.einsum("ij,ij->i", grad, grad) * rho) @ w)
    return total / R ** 2


def local_target_factor(kind: FunctionalKind, params: FracParams) -> float:
    """Limit of J^s / J_local as s -> 1: 2/(nω_n) for G_u, 1/(nω_n) for |∇^s u|^2."""
    return (2.0 if kind == FunctionalKind.G else 1.0) / params.surface_area


# ---- Sign preconditions ----

def precondition_points(n: int, radius: float) -> np.ndarray:
    """Origin plus ±f·radius·e_i for f in {1/4, 1/2, 3/4, 1}."""
    points = [np.zeros(n)]
    for i in range(n):
        for f in (0.25, 0.5, 0.75, 1.0):
            for sign in (1.0, -1.0):
                p = np.zeros(n)
                p[i] = sign * f * radius
                points.append(p)
    return np.array(points)


def sign_precondition(u: ScalarField, params: FracParams, spec: QuadratureSpec, kind: FunctionalKind,
                      radius: float, inner_product: bool = False, jobs: int = 1) -> PreconditionReport:
    """Sample the sign condition a monotonicity statement needs near the origin.

    Default: (-Δ)^s D <= 0 with D the functional's density. With
    `inner_product`: <∇^s u, ∇^s f> <= 0, f = (-Δ)^s u.
    """
    points = precondition_points(params.n, radius)
    if inner_product:
        lap = ops.frac_laplacian_field(u, params, spec)
        description = "<grad_s u, grad_s f> <= 0, f = (-Lap)^s u"

        def sample(p):
            du = ops.frac_gradient(u, p, params, spec)
            df = ops.frac_gradient(lap, p, params, spec)
            a, b = np.asarray(du.value), np.asarray(df.value)
            err = float(np.linalg.norm(a)) * df.abs_error_estimate + float(np.linalg.norm(b)) * du.abs_error_estimate
            return float(a @ b), err
    else:
        density = density_field(u, kind, params, spec)
        description = f"(-Lap)^s {'G_u' if kind == FunctionalKind.G else '|grad_s u|^2'} <= 0"

        def sample(p):
            v = ops.frac_laplacian(density, p, params, spec)
            return v.scalar, v.abs_error_estimate

    results = ordered_map(sample, list(points), jobs)
    values = [v for v, _ in results]
    errors = [e for _, e in results]
    scale = max([abs(v) for v in values] + [1.0])
    tolerance = 10.0 * max(errors) + 1e-9 * scale
    excursion = max(max(values), 0.0)
    report = PreconditionReport(
        description=description,
        points=points.tolist(),
        values=values,
        error_estimates=errors,
        max_positive_excursion=excursion,
        tolerance=tolerance,
    )
    if not report.satisfied:
        logger.warning("precondition '%s' not met: excursion %.3e > %.3e", description, excursion, tolerance)
    return report


# ---- Experiments ----

def monotone_prefix(values: Sequence[float], errors: Sequence[float]) -> int:
    """Largest k such that the first k values pass the defect test."""
    best = min(1, len(values))
    for k in range(2, len(values) + 1):
        drops = [max(a - b, 0.0) for a, b in zip(values[:k], values[1:k])]
        if max(drops) <= 3.0 * sum(errors[:k]):
            best = k
        else:
            break
    return best


def _cumulative_rules(R_grid: Sequence[float], s: float, m: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Nodes/weights of ∫_{R_{k-1}}^{R_k} r^s F(r) dr, k = 0.. (R_{-1} = 0)."""
    rules = []
    t, w = quad.gauss_jacobi_weighted(m, s)
    R0 = R_grid[0]
    rules.append((R0 * t, R0 ** (1.0 + s) * w))
    x, wl = quad.gauss_legendre(max(4, m // 2))
    for a, b in zip(R_grid[:-1], R_grid[1:]):
        r = 0.5 * (a + b) + 0.5 * (b - a) * x
        rules.append((r, 0.5 * (b - a) * wl * r ** s))
    return rules


def _curve_values(means: List[OperatorValue], rules, R_grid, s) -> Tuple[List[float], List[float]]:
    values, inner = [], []
    running, running_err, k = 0.0, 0.0, 0
    for (r, w), R in zip(rules, R_grid):
        chunk = means[k:k + len(r)]
        k += len(r)
        running += float(sum(wi * m.scalar for wi, m in zip(w, chunk)))
        running_err += float(sum(abs(wi) * m.abs_error_estimate for wi, m in zip(w, chunk)))
        values.append(running / R ** (1.0 + s))
        inner.append(running_err / R ** (1.0 + s))
    return values, inner


def monotonicity_experiment(u: ScalarField, R_grid: Sequence[float], params: FracParams,
                            spec: QuadratureSpec, kind: FunctionalKind = FunctionalKind.G,
                            inner_product: bool = False, jobs: int = 1) -> FunctionalCurve:
    """Sample R -> J(u, R) on a grid after checking the sign precondition."""
    R_grid = [float(R) for R in R_grid]
    if not R_grid or R_grid[0] <= 0 or any(b <= a for a, b in zip(R_grid, R_grid[1:])):
        raise ParameterError("radius grid must be nonempty, positive and increasing",
                             module="functionals", context={"R_grid": R_grid})
    report = sign_precondition(u, params, spec, kind, 0.1 * min(R_grid), inner_product, jobs)
    density = density_field(u, kind, params, spec)
    s = params.s
    full_rules = _cumulative_rules(R_grid, s, spec.outer_nodes)
    coarse_rules = _cumulative_rules(R_grid, s, spec.coarse().outer_nodes)
    radii = [float(r) for rules in (full_rules, coarse_rules) for nodes, _ in rules for r in nodes]
    means = _means(density, radii, params, spec, EXTERIOR, jobs)
    split = sum(len(r) for r, _ in full_rules)
    values, inner = _curve_values(means[:split], full_rules, R_grid, s)
    coarse_values, _ = _curve_values(means[split:], coarse_rules, R_grid, s)
    errors = [abs(v - c) + e for v, c, e in zip(values, coarse_values, inner)]
    curve = FunctionalCurve(
        radii=R_grid,
        values=values,
        error_estimates=errors,
        precondition_report=report,
        monotone_prefix=monotone_prefix(values, errors),
    )
    logger.info("monotonicity %s on %s: defect %.3e, summed error %.3e, prefix %d/%d",
                kind.value, u.field_id, curve.monotonicity_defect, curve.summed_error,
                curve.monotone_prefix, len(R_grid))
    return curve


def richardson_limit(s_values: Sequence[float], values: Sequence[float]) -> float:
    """Richardson step at h = 1 - s on the two finest points, eliminating the O(h) term."""
    if len(values) < 2:
        return float(values[-1])
    h_a, h_b = 1.0 - float(s_values[-2]), 1.0 - float(s_values[-1])
    y_a, y_b = float(values[-2]), float(values[-1])
    return (h_a * y_b - h_b * y_a) / (h_a - h_b)


def stability_experiment(u: ScalarField, R: float, s_grid: Sequence[float], n: int, spec: QuadratureSpec,
                         kind: FunctionalKind = FunctionalKind.G, jobs: int = 1) -> Dict:
    """J^s(u, R) along s -> 1 against the local target."""
    s_grid = [float(s) for s in s_grid]
    if not s_grid or any(b <= a for a, b in zip(s_grid, s_grid[1:])):
        raise ParameterError("s grid must be nonempty and increasing", module="functionals")
    local = j_acf_local(u, R, spec)
    rows = []
    for s in s_grid:
        params = make_params(n, s)
        J = j_acf(u, R, params, spec, kind=kind, jobs=jobs)
        target = local_target_factor(kind, params) * local
        rows.append({"s": s, "value": J.scalar, "error_estimate": J.abs_error_estimate,
                     "target": target, "abs_diff": abs(J.scalar - target)})
        logger.info("stability s=%s: J=%.8g target=%.8g", s, J.scalar, target)
    target = rows[-1]["target"]
    extrapolated = richardson_limit(s_grid, [r["value"] for r in rows])
    diffs = [r["abs_diff"] for r in rows]
    tail = list(zip(diffs, rows))[-3:]
    decreasing = all(
        b[0] <= a[0] + a[1]["error_estimate"] + b[1]["error_estimate"]
        for a, b in zip(tail, tail[1:])
    )
    rel = abs(extrapolated - target) / abs(target) if target else abs(extrapolated)
    return {
        "rows": rows,
        "local_value": local,
        "target": target,
        "extrapolated": extrapolated,
        "extrapolation_rel_error": rel,
        "tail_decreasing": decreasing,
    }


def scaling_experiment(u: ScalarField, R: float, lambdas: Sequence[float], params: FracParams,
                       spec: QuadratureSpec, kind: FunctionalKind = FunctionalKind.G,
                       points: Sequence[Sequence[float]] = (), jobs: int = 1) -> Dict:
    """J(u_λ, R/λ) against J(u, R), plus the pointwise covariances of G and ∇^s."""
    base = j_acf(u, R, params, spec, kind=kind, jobs=jobs)
    rows, pointwise = [], []
    for lam in lambdas:
        v = scaled_field(u, lam, params.s)
        J = j_acf(v, R / lam, params, spec, kind=kind, jobs=jobs)
        scale = max(abs(base.scalar), 1e-300)
        rows.append({"lambda": float(lam), "value": J.scalar, "reference": base.scalar,
                     "rel_diff": abs(J.scalar - base.scalar) / scale,
                     "error_estimate": J.abs_error_estimate + base.abs_error_estimate})
        for y in points:
            y = np.asarray(y, dtype=float)
            g_scaled = ops.energy_density_G(v, y, params, spec)
            g_base = ops.energy_density_G(u, lam * y, params, spec)
            d_scaled = ops.frac_gradient(v, y, params, spec)
            d_base = ops.frac_gradient(u, lam * y, params, spec)
            pointwise.append({
                "lambda": float(lam), "point": y.tolist(),
                "G_diff": abs(g_scaled.scalar - g_base.scalar),
                "G_error": g_scaled.abs_error_estimate + g_base.abs_error_estimate,
                "grad_diff": float(np.linalg.norm(np.asarray(d_scaled.value) - np.asarray(d_base.value))),
                "grad_error": d_scaled.abs_error_estimate + d_base.abs_error_estimate,
            })
    return {"base": base.to_dict(), "rows": rows, "pointwise": pointwise,
            "max_rel_diff": max((r["rel_diff"] for r in rows), default=0.0)}


def acf_bound_experiment(u: ScalarField, R_grid: Sequence[float], params: FracParams, spec: QuadratureSpec,
                         kind: FunctionalKind = FunctionalKind.G, check_doubling: bool = True,
                         jobs: int = 1) -> Dict:
    """ρ(R) = J(u, R) R^(2s) / ∫ D(x) |x|^(2s-n) dx, D the functional's density."""
    n, s = params.n, params.s
    if abs(2.0 * s - n) < 1e-14:
        raise ParameterError("weight |x|^(2s-n) is trivial for 2s = n", module="functionals",
                             context={"n": n, "s": s})

    def ratios(level: QuadratureSpec):
        density = density_field(u, kind, params, level)
        W = ops.weighted_integral(density, 2.0 * s - n, params, level)
        out = []
        for R in R_grid:
            J = j_acf(u, R, params, level, kind=kind, jobs=jobs)
            ratio = J.scalar * R ** (2.0 * s) / W.scalar if W.scalar > 0 else 0.0
            out.append({"R": float(R), "value": J.scalar, "error_estimate": J.abs_error_estimate,
                        "weighted_integral": W.scalar, "ratio": ratio})
        return out

    rows = ratios(spec)
    max_ratio = max((r["ratio"] for r in rows), default=0.0)
    result = {"rows": rows, "max_ratio": max_ratio}
    if check_doubling:
        doubled = max((r["ratio"] for r in ratios(spec.doubled())), default=0.0)
        change = abs(doubled - max_ratio) / max_ratio if max_ratio > 0 else abs(doubled)
        result.update({"max_ratio_doubled": doubled, "doubling_rel_change": change,
                       "stable": change <= 0.1})
    return result


def _grid_in_unit_ball(n: int) -> np.ndarray:
    axis = np.linspace(-1.0, 1.0, 21 if n == 1 else 11)
    mesh = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
    return mesh[np.linalg.norm(mesh, axis=-1) <= 1.0]


def local_mean_value_lower_bound(u: ScalarField, R: float, params: FracParams, spec: QuadratureSpec,
                                 G0: Optional[OperatorValue] = None, jobs: int = 1) -> Dict:
    """G_u(0) <= (1 + s) J(u, R), up to the combined error estimate."""
    G0 = G0 or ops.energy_density_G(u, np.zeros(params.n), params, spec)
    J = j_acf(u, R, params, spec, jobs=jobs)
    bound = (1.0 + params.s) * J.scalar
    slack = G0.abs_error_estimate + (1.0 + params.s) * J.abs_error_estimate
    return {"R": float(R), "G0": G0.scalar, "J": J.scalar, "bound": bound,
            "holds": G0.scalar <= bound + slack}


def gradient_estimate_experiment(u: ScalarField, params: FracParams, spec: QuadratureSpec,
                                 R_values: Sequence[float] = (0.25, 0.5, 0.75), jobs: int = 1) -> Dict:
    """G_u(0) against (u(0)^2 + ‖u‖‖f‖) / R^(2s), f = (-Δ)^s u on a grid of B_1."""
    n, s = params.n, params.s
    origin = np.zeros(n)
    grid = _grid_in_unit_ball(n)

    def sup_norms(v: ScalarField) -> Tuple[float, float]:
        f = ops.frac_laplacian_field(v, params, spec)
        f_values = ordered_map(lambda p: float(f(p[None, :])[0]), list(grid), jobs)
        return float(np.max(np.abs(v(grid)))), float(np.max(np.abs(f_values)))

    def ratios(v: ScalarField, G0: float, u_sup: float, f_sup: float) -> List[float]:
        u0 = float(v(origin[None, :])[0])
        out = []
        for R in R_values:
            bracket = (u0 ** 2 + u_sup * f_sup) / R ** (2.0 * s)
            out.append(G0 / bracket if bracket > 0 else 0.0)
        return out

    G0 = ops.energy_density_G(u, origin, params, spec)
    u_sup, f_sup = sup_norms(u)
    base = ratios(u, G0.scalar, u_sup, f_sup)
    rows = [{"R": float(R), "G0": G0.scalar, "ratio": q} for R, q in zip(R_values, base)]

    norm = u_sup + f_sup
    normalized = base
    if norm > 0:
        v = times_field(u, 1.0 / norm)
        G0_bar = ops.energy_density_G(v, origin, params, spec)
        normalized = ratios(v, G0_bar.scalar, *sup_norms(v))
    invariance = max((abs(a - b) / max(abs(a), 1e-300) for a, b in zip(base, normalized) if a), default=0.0)

    G0_doubled = ops.energy_density_G(u, origin, params, spec.doubled())
    doubling = abs(G0_doubled.scalar - G0.scalar) / max(abs(G0.scalar), 1e-300) if G0.scalar else 0.0
    precondition = sign_precondition(u, params, spec, FunctionalKind.G, 0.5, jobs=jobs)
    lower = [local_mean_value_lower_bound(u, R, params, spec, G0, jobs) for R in R_values] \
        if precondition.satisfied else []
    return {
        "rows": rows,
        "u_sup": u_sup,
        "f_sup": f_sup,
        "G0": G0.to_dict(),
        "max_ratio": max(base, default=0.0),
        "finite": all(math.isfinite(q) for q in base),
        "normalization_rel_change": invariance,
        "doubling_rel_change": doubling,
        "precondition": precondition.to_dict(),
        "mean_value_lower_bound": lower,
    }
