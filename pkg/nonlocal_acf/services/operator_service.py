"""
Pointwise evaluators for the nonlocal operators.

Every operator is integrated along rays from the evaluation point: a near
field |z| <= L (L = spec.split_radius) graded toward z = 0, and a far field
on knots taken from the supports and envelopes of the fields involved.
Error estimates compare the full rule with its half-order companion and add
the closed-form tail bound.

Nested operators (the Laplacian of G_u, Bochner terms) go through derived
fields: ScalarFields whose evaluator is itself an operator, memoized on
quantized points.
"""
from functools import lru_cache
import logging
import math
import threading
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from nonlocal_acf.core.cache import cache_for
from nonlocal_acf.core.enums import Regularity
from nonlocal_acf.core.errors import EvaluationError, ParameterError
from nonlocal_acf.models.fields import Ball, ScalarField, TailEnvelope, VectorField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.models.results import OperatorValue
from nonlocal_acf.services import quadrature_service as quad
from nonlocal_acf.services.field_catalog import square_field

logger = logging.getLogger(__name__)

Nodes = Tuple[np.ndarray, np.ndarray, np.ndarray]  # radii, directions, weights


# ---- Node sets ----

def _point(x, dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.size != dim:
        raise ParameterError(f"expected a point in R^{dim}", module="operators", context={"point": arr})
    return arr


def _refuse_pole(u: ScalarField, x: np.ndarray):
    for pole in u.singular_points:
        if np.linalg.norm(x - np.asarray(pole)) < 1e-14:
            raise EvaluationError("operator evaluated at a singular point of the field",
                                  context={"field": u.field_id, "point": x})


def _directions(n: int, spec: QuadratureSpec, half: bool):
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    if half:
        k = len(dirs) // 2
        return dirs[:k], 2.0 * wdirs[:k]
    return dirs, wdirs


@lru_cache(maxsize=1024)
def _near_grid(n: int, spec: QuadratureSpec, m: int, beta: float, half: bool,
               length_scale: float, min_scale: float) -> Nodes:
    rho, w = quad.near_rule(0.0, spec.split_radius, beta, spec, m, length_scale, min_scale)
    dirs, wdirs = _directions(n, spec, half)
    return (
        np.tile(rho, len(dirs)),
        np.repeat(dirs, len(rho), axis=0),
        (wdirs[:, None] * w[None, :]).ravel(),
    )


def _stack(rows: List[Nodes], n: int) -> Nodes:
    if not rows:
        return np.empty(0), np.empty((0, n)), np.empty(0)
    return (
        np.concatenate([r[0] for r in rows]),
        np.concatenate([r[1] for r in rows]),
        np.concatenate([r[2] for r in rows]),
    )


def _near_nodes(x: np.ndarray, fields: Sequence, spec: QuadratureSpec, m: int, beta: float,
                half: bool = False, extra_interfaces: Sequence[Ball] = ()) -> Nodes:
    """Nodes on |z| <= L graded toward z = 0; `half` keeps one of each ±θ pair (even integrands)."""
    n = x.size
    length_scale = min(f.length_scale for f in fields)
    min_scale = max(f.min_scale for f in fields)
    interfaces = [b for f in fields for b in f.interfaces] + list(extra_interfaces)
    if not interfaces:
        return _near_grid(n, spec, m, beta, half, length_scale, min_scale)
    L = spec.split_radius
    dirs, wdirs = _directions(n, spec, half)
    rows = []
    for theta, wt in zip(dirs, wdirs):
        hits = quad.interface_hits(x, theta, interfaces)
        if half:
            hits += quad.interface_hits(x, -theta, interfaces)
        hits = [t for t in hits if 0.0 < t < L]
        rho, w = quad.near_rule(0.0, L, beta, spec, m, length_scale, min_scale, interior=hits)
        rows.append((rho, np.repeat(theta[None, :], len(rho), axis=0), wt * w))
    return _stack(rows, n)


def _far_nodes(x: np.ndarray, fields: Sequence, spec: QuadratureSpec, m: int, kernel_decay: float,
               start: Optional[float] = None) -> Tuple[Nodes, float]:
    n = x.size
    start = spec.split_radius if start is None else start
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    rows, T = [], 0.0
    for theta, wt in zip(dirs, wdirs):
        (rho, w), T_ray = quad.far_rule(x, theta, fields, start, spec, m, kernel_decay, n)
        if rho.size:
            rows.append((rho, np.repeat(theta[None, :], len(rho), axis=0), wt * w))
        T = max(T, T_ray)
    return _stack(rows, n), T


def _at(x: np.ndarray, nodes: Nodes, sign: float = 1.0) -> np.ndarray:
    return x[None, :] + sign * nodes[0][:, None] * nodes[1]


def _sum(nodes: Nodes, values: np.ndarray) -> float:
    return float(nodes[2] @ values) if nodes[0].size else 0.0


def _sum_vector(nodes: Nodes, values: np.ndarray) -> np.ndarray:
    if not nodes[0].size:
        return np.zeros(nodes[1].shape[1])
    return (nodes[2] * values) @ nodes[1]


def _eval(u, points: np.ndarray) -> np.ndarray:
    if not len(points):
        return np.empty(0) if isinstance(u, ScalarField) else np.empty((0, u.dim))
    return np.asarray(u(points), dtype=float)


def _tail(envelope: TailEnvelope, kernel_decay: float, n: int, tol: float) -> Tuple[float, float]:
    """(truncation radius, closed-form remainder beyond it)."""
    T = quad.truncation_radius(envelope, kernel_decay, tol, n)
    return T, quad.tail_bound(envelope, kernel_decay, T, n)


def _estimate(compute: Callable[[int], Tuple[object, float, float]], spec: QuadratureSpec,
              estimate: bool) -> OperatorValue:
    """Run `compute(m)` at full and half panel order; error = difference + tail bound."""
    value, T, tail = compute(spec.nodes_per_panel)
    if not estimate:
        return OperatorValue(value, tail, T)
    coarse, _, _ = compute(spec.coarse().nodes_per_panel)
    diff = float(np.linalg.norm(np.atleast_1d(np.asarray(value) - np.asarray(coarse))))
    return OperatorValue(value, diff + tail, T)


# ---- Poles ----

def _smooth_step(t: np.ndarray) -> np.ndarray:
    """1 for t <= 1/2, 0 for t >= 1, C-infinity in between."""
    tau = np.clip(2.0 * (np.asarray(t, dtype=float) - 0.5), 0.0, 1.0)

    def f(v):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)

    a, b = f(1.0 - tau), f(tau)
    return a / (a + b)


def _split_poles(u: ScalarField, x: np.ndarray):
    """Split u = (1 - Σχ_p) u + Σ χ_p u with χ_p = 1 near each pole and 0 near x."""
    cutoffs = []
    for pole in u.singular_points:
        p = np.asarray(pole, dtype=float)
        cutoffs.append((p, 0.5 * float(np.linalg.norm(x - p))))

    def chi(points: np.ndarray) -> np.ndarray:
        total = np.zeros(len(points))
        for p, delta in cutoffs:
            total += _smooth_step(np.linalg.norm(points - p, axis=-1) / delta)
        return total

    def regular(points):
        out = np.zeros(len(points))
        weight = 1.0 - chi(points)
        mask = weight > 0
        if np.any(mask):
            out[mask] = weight[mask] * u(points[mask])
        return out

    interfaces = tuple(u.interfaces) + tuple(
        Ball(tuple(p), r) for p, delta in cutoffs for r in (0.5 * delta, delta)
    )
    field = ScalarField(
        field_id=f"regular[{u.field_id}]",
        dim=u.dim,
        evaluator=regular,
        regularity=u.regularity,
        tail=u.tail,
        interfaces=interfaces,
        length_scale=min([u.length_scale] + [0.5 * d for _, d in cutoffs]),
        min_scale=u.min_scale,
    )
    return field, cutoffs


def _pole_integral(u: ScalarField, p: np.ndarray, delta: float, spec: QuadratureSpec, m: int,
                   kernel: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """∫_{B_δ(p)} χ_p(y) u(y) kernel(y) dy in polar coordinates about the pole."""
    n = u.dim
    beta = u.metadata.get("pole_exponent", 0.0) + n - 1.0
    rho, w = quad.build_rule(0.0, delta, spec, m, beta_a=beta, interior=(0.5 * delta,),
                             max_width=spec.resolution * 0.5 * delta)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    nodes = (np.tile(rho, len(dirs)), np.repeat(dirs, len(rho), axis=0),
             (wdirs[:, None] * w[None, :]).ravel())
    y = _at(p, nodes)
    values = _smooth_step(nodes[0] / delta) * u(y) * nodes[0] ** (n - 1)
    k = kernel(y)
    if k.ndim == 1:
        return np.asarray(_sum(nodes, values * k))
    return (nodes[2] * values) @ k


# ---- (-Δ)^s ----

def frac_laplacian(u: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                   estimate: bool = True) -> OperatorValue:
    """(C/2) ∫ (2u(x) - u(x+z) - u(x-z)) |z|^(-n-2s) dz."""
    x = _point(x, u.dim)
    _refuse_pole(u, x)
    n, s, C = params.n, params.s, params.c_ns
    if u.singular:
        regular, cutoffs = _split_poles(u, x)
        smooth = frac_laplacian(regular, x, params, spec, estimate)

        def compute_poles(m):
            total = 0.0
            for p, delta in cutoffs:
                total += float(_pole_integral(
                    u, p, delta, spec, m,
                    lambda y: np.linalg.norm(y - x, axis=-1) ** (-n - 2.0 * s),
                ))
            return -C * total, 0.0, 0.0

        poles = _estimate(compute_poles, spec, estimate)
        return OperatorValue(smooth.value + poles.value,
                             smooth.abs_error_estimate + poles.abs_error_estimate,
                             smooth.truncation_radius_used)

    L = spec.split_radius
    _, tail = _tail(u.tail, n + 2.0 * s, n, spec.tail_tol)

    def compute(m):
        ux = float(_eval(u, x[None, :])[0])
        near_nodes = _near_nodes(x, [u], spec, m, 1.0 - 2.0 * s, half=True)
        second = 2.0 * ux - _eval(u, _at(x, near_nodes)) - _eval(u, _at(x, near_nodes, -1.0))
        near = _sum(near_nodes, second * near_nodes[0] ** (-1.0 - 2.0 * s))
        far_nodes, T = _far_nodes(x, [u], spec, m, n + 2.0 * s)
        far = _sum(far_nodes, _eval(u, _at(x, far_nodes)) * far_nodes[0] ** (-1.0 - 2.0 * s))
        value = C * (0.5 * near + ux * params.surface_area * L ** (-2.0 * s) / (2.0 * s) - far)
        return value, T, C * tail

    return _estimate(compute, spec, estimate)


# ---- Energy density ----

def energy_pair(u: ScalarField, v: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                estimate: bool = True) -> OperatorValue:
    """C ∫ (u(x) - u(y)) (v(x) - v(y)) |x-y|^(-n-2s) dy; G_u when v is u."""
    x = _point(x, u.dim)
    if u.singular or v.singular:
        raise EvaluationError("energy density requires locally bounded fields",
                              context={"field": u.field_id})
    n, s, C = params.n, params.s, params.c_ns
    L = spec.split_radius
    fields = [u] if v is u else [u, v]
    k = n + 2.0 * s

    def compute(m):
        ux = float(_eval(u, x[None, :])[0])
        vx = ux if v is u else float(_eval(v, x[None, :])[0])
        near_nodes = _near_nodes(x, fields, spec, m, 1.0 - 2.0 * s)
        y = _at(x, near_nodes)
        uy = _eval(u, y)
        vy = uy if v is u else _eval(v, y)
        near = _sum(near_nodes, (ux - uy) * (vx - vy) * near_nodes[0] ** (-1.0 - 2.0 * s))
        far_nodes, T = _far_nodes(x, fields, spec, m, k)
        y = _at(x, far_nodes)
        uy = _eval(u, y)
        vy = uy if v is u else _eval(v, y)
        far = _sum(far_nodes, (uy * vy - ux * vy - vx * uy) * far_nodes[0] ** (-1.0 - 2.0 * s))
        value = C * (near + ux * vx * params.surface_area * L ** (-2.0 * s) / (2.0 * s) + far)
        tail = C * (abs(vx) * _tail(u.tail, k, n, spec.tail_tol)[1]
                    + abs(ux) * _tail(v.tail, k, n, spec.tail_tol)[1])
        if not (u.tail.compact or v.tail.compact):
            product = TailEnvelope(u.tail.amplitude * v.tail.amplitude, u.tail.power + v.tail.power,
                                   max(u.tail.radius, v.tail.radius))
            tail += C * _tail(product, k, n, spec.tail_tol)[1]
        return value, T, tail

    return _estimate(compute, spec, estimate)


def energy_density_G(u: ScalarField, y, params: FracParams, spec: QuadratureSpec,
                     estimate: bool = True) -> OperatorValue:
    """G_u(y) = C ∫ (u(y) - u(η))^2 |y-η|^(-n-2s) dη."""
    return energy_pair(u, u, y, params, spec, estimate)


def product_rule_residual(u: ScalarField, x, params: FracParams, spec: QuadratureSpec) -> Dict:
    """(-Δ)^s(u^2)(x) against 2u(x)(-Δ)^s u(x) - G_u(x)."""
    x = _point(x, u.dim)
    lhs = frac_laplacian(square_field(u), x, params, spec)
    lap = frac_laplacian(u, x, params, spec)
    G = energy_density_G(u, x, params, spec)
    ux = float(_eval(u, x[None, :])[0])
    rhs = 2.0 * ux * lap.scalar - G.scalar
    return {
        "point": x.tolist(),
        "lhs": lhs.scalar,
        "rhs": rhs,
        "residual": lhs.scalar - rhs,
        "combined_error": lhs.abs_error_estimate + 2.0 * abs(ux) * lap.abs_error_estimate + G.abs_error_estimate,
    }


# ---- Fractional gradient and divergence ----

def frac_gradient(u: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                  estimate: bool = True, component: Optional[int] = None) -> OperatorValue:
    """μ ∫ (y-x)(u(y) - u(x)) |y-x|^(-n-s-1) dy, or its `component`-th entry."""
    x = _point(x, u.dim)
    _refuse_pole(u, x)
    n, s, mu = params.n, params.s, params.mu_ns

    def pick(vec):
        return float(vec[component]) if component is not None else vec

    if u.singular:
        regular, cutoffs = _split_poles(u, x)
        smooth = frac_gradient(regular, x, params, spec, estimate, component)

        def compute_poles(m):
            total = np.zeros(n)
            for p, delta in cutoffs:
                def kernel(y):
                    d = y - x
                    return d * np.linalg.norm(d, axis=-1)[:, None] ** (-n - s - 1.0)
                total += _pole_integral(u, p, delta, spec, m, kernel)
            return pick(mu * total), 0.0, 0.0

        poles = _estimate(compute_poles, spec, estimate)
        return OperatorValue(smooth.value + poles.value,
                             smooth.abs_error_estimate + poles.abs_error_estimate,
                             smooth.truncation_radius_used)

    _, tail = _tail(u.tail, n + s, n, spec.tail_tol)

    def compute(m):
        near_nodes = _near_nodes(x, [u], spec, m, -s, half=True)
        odd = _eval(u, _at(x, near_nodes)) - _eval(u, _at(x, near_nodes, -1.0))
        near = _sum_vector(near_nodes, odd * near_nodes[0] ** (-1.0 - s))
        far_nodes, T = _far_nodes(x, [u], spec, m, n + s)
        far = _sum_vector(far_nodes, _eval(u, _at(x, far_nodes)) * far_nodes[0] ** (-1.0 - s))
        return pick(mu * (0.5 * near + far)), T, mu * tail

    return _estimate(compute, spec, estimate)


def frac_divergence(phi: VectorField, x, params: FracParams, spec: QuadratureSpec,
                    estimate: bool = True) -> OperatorValue:
    """μ ∫ (y-x)·(φ(y) - φ(x)) |y-x|^(-n-s-1) dy."""
    x = _point(x, phi.dim)
    n, s, mu = params.n, params.s, params.mu_ns
    parts = list(phi.components)
    _, tail = _tail(phi.tail, n + s, n, spec.tail_tol)

    def compute(m):
        near_nodes = _near_nodes(x, parts, spec, m, -s, half=True)
        diff = _eval(phi, _at(x, near_nodes)) - _eval(phi, _at(x, near_nodes, -1.0))
        near = _sum(near_nodes, np.einsum("ij,ij->i", diff, near_nodes[1]) * near_nodes[0] ** (-1.0 - s))
        far_nodes, T = _far_nodes(x, parts, spec, m, n + s)
        values = _eval(phi, _at(x, far_nodes))
        far = _sum(far_nodes, np.einsum("ij,ij->i", values, far_nodes[1]) * far_nodes[0] ** (-1.0 - s)) \
            if far_nodes[0].size else 0.0
        return mu * (0.5 * near + far), T, mu * tail

    return _estimate(compute, spec, estimate)


# ---- Integrals over a ball seen from outside ----

def chord_nodes(x: np.ndarray, D: Ball, fields: Sequence, spec: QuadratureSpec, m: int) -> Nodes:
    """Nodes of ∫_D F(y) |x-y|^(1-n) dy along rays from an exterior point x.

    Knots are geometric from the entry point (resolving the |x-y| kernel
    when x is close to the sphere) and uniform at the fields' length scale.
    """
    n = x.size
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    width = spec.resolution * min([f.length_scale for f in fields] + [D.radius])
    interfaces = [b for f in fields for b in f.interfaces]
    rows = []
    for theta, wt in zip(dirs, wdirs):
        crossing = quad.sphere_crossings(x, theta, D)
        if crossing is None or crossing[1] <= 0:
            continue
        t_in, t_out = max(crossing[0], 0.0), crossing[1]
        if t_in <= 0:
            raise ParameterError("point lies inside the ball", module="operators", context={"point": x})
        count = max(4, int(math.ceil(math.log(t_out / t_in) / math.log1p(spec.resolution))))
        knots = [quad.geometric_knots(t_in, t_out, count),
                 np.linspace(t_in, t_out, int(math.ceil((t_out - t_in) / width)) + 1)]
        for t in quad.interface_hits(x, theta, interfaces):
            if t_in < t < t_out:
                knots.append(quad.cluster_knots(t, min(width, t - t_in, t_out - t), spec))
        merged = np.unique(np.clip(np.concatenate(knots), t_in, t_out))
        rho, w = quad.panel_rule(merged, m)
        rows.append((rho, np.repeat(theta[None, :], len(rho), axis=0), wt * w))
    return _stack(rows, n)


def nonlocal_normal(f: ScalarField, D: Ball, x, params: FracParams, spec: QuadratureSpec,
                    estimate: bool = True) -> OperatorValue:
    """N_s^D f(x) = ∫_D (f(x) - f(y)) |x-y|^(-n-2s) dy for x outside the closure of D."""
    x = _point(x, f.dim)
    if D.distance(x)[0] <= 0:
        raise ParameterError("nonlocal normal derivative needs x outside the closed ball",
                             module="operators", context={"point": x, "radius": D.radius})
    s = params.s
    fx = float(_eval(f, x[None, :])[0])

    def compute(m):
        nodes = chord_nodes(x, D, [f], spec, m)
        values = (fx - _eval(f, _at(x, nodes))) * nodes[0] ** (-1.0 - 2.0 * s)
        return _sum(nodes, values), 0.0, 0.0

    return _estimate(compute, spec, estimate)


def exterior_chord_integral(x: np.ndarray, D: Ball, integrand: Callable[[np.ndarray, np.ndarray], np.ndarray],
                            fields: Sequence, params: FracParams, spec: QuadratureSpec,
                            estimate: bool = True) -> OperatorValue:
    """∫_D integrand(x, y) |x-y|^(-n-2s) dy for x outside D (integrand vectorized over y)."""
    s = params.s

    def compute(m):
        nodes = chord_nodes(x, D, fields, spec, m)
        y = _at(x, nodes)
        return _sum(nodes, integrand(x, y) * nodes[0] ** (-1.0 - 2.0 * s)), 0.0, 0.0

    return _estimate(compute, spec, estimate)


# ---- s-mean and Poisson kernel ----

def s_mean(g: ScalarField, x, r: float, params: FracParams, spec: QuadratureSpec,
           estimate: bool = True) -> OperatorValue:
    """M_s(g, r)(x) = ∫_{|y|>r} a r^(2s) (|y|^2 - r^2)^(-s) |y|^(-n) g(x-y) dy."""
    x = _point(x, g.dim)
    if not r > 0:
        raise ParameterError("s-mean radius must be positive", module="operators", context={"r": r})
    if g.singular:
        raise EvaluationError("s-mean requires a locally bounded field", context={"field": g.field_id})
    n, s, a = params.n, params.s, params.a_ns
    weight = a * r ** (2.0 * s)
    _, tail = _tail(g.tail, n + 2.0 * s, n, spec.tail_tol)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    width = spec.resolution * min(g.length_scale, r)

    def kernel(rho):
        return weight * (rho ** 2 - r ** 2) ** (-s) / rho

    def compute(m):
        rows = []
        for theta, wt in zip(dirs, wdirs):
            hits = [t for t in quad.interface_hits(x, theta, g.interfaces) if r < t < 2.0 * r]
            rho, w = quad.build_rule(r, 2.0 * r, spec, m, beta_a=-s, interior=hits,
                                     max_width=width, min_width=g.min_scale)
            rows.append((rho, np.repeat(theta[None, :], len(rho), axis=0), wt * w))
        near_nodes = _stack(rows, n)
        near = _sum(near_nodes, kernel(near_nodes[0]) * _eval(g, _at(x, near_nodes)))
        far_nodes, T = _far_nodes(x, [g], spec, m, n + 2.0 * s, start=2.0 * r)
        far = _sum(far_nodes, kernel(far_nodes[0]) * _eval(g, _at(x, far_nodes)))
        return near + far, T, weight * tail

    return _estimate(compute, spec, estimate)


def poisson_kernel_values(X: np.ndarray, Y: np.ndarray, ball: Ball, params: FracParams) -> np.ndarray:
    """Matrix K^s_r(X_i, Y_j) for interior X and exterior Y."""
    c = np.asarray(ball.center)
    xc, yc = np.atleast_2d(X) - c, np.atleast_2d(Y) - c
    r2 = ball.radius ** 2
    inner = r2 - np.einsum("ij,ij->i", xc, xc)
    outer = np.einsum("ij,ij->i", yc, yc) - r2
    dist = np.linalg.norm(xc[:, None, :] - yc[None, :, :], axis=-1)
    return params.a_ns * (inner[:, None] / outer[None, :]) ** params.s * dist ** (-params.n)


def poisson_kernel(x, y, ball: Ball, params: FracParams) -> float:
    """a ((r^2 - |x|^2)/(|y|^2 - r^2))^s |x-y|^(-n) for |x| < r < |y| (relative to the center)."""
    x, y = _point(x, params.n), _point(y, params.n)
    if not (ball.distance(x)[0] < 0 < ball.distance(y)[0]):
        raise ParameterError("Poisson kernel needs x inside and y outside the ball", module="operators",
                             context={"x": x, "y": y, "radius": ball.radius})
    return float(poisson_kernel_values(x[None, :], y[None, :], ball, params)[0, 0])


# ---- Weighted integrals over R^n ----

def weighted_integral(u: ScalarField, weight_power: float, params: FracParams,
                      spec: QuadratureSpec) -> OperatorValue:
    """∫ u(x) |x|^q dx over R^n in polar coordinates about the origin (q = weight_power)."""
    n = params.n
    beta = weight_power + n - 1.0
    T, tail = _tail(u.tail, -weight_power, n, spec.tail_tol)
    inner = u.extent if u.compact else u.tail.radius
    inner = min(inner, T)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)

    def compute(m):
        rho, w = quad.build_rule(0.0, inner, spec, m, beta_a=beta if beta < 0 else None,
                                 interior=[b.radius for b in u.interfaces if not any(b.center)],
                                 max_width=spec.resolution * u.length_scale, min_width=u.min_scale)
        if T > inner:
            far = quad.panel_rule(quad.geometric_knots(inner, T, quad.far_panel_count(inner, T, spec)), m)
            rho, w = np.concatenate([rho, far[0]]), np.concatenate([w, far[1]])
        nodes = (np.tile(rho, len(dirs)), np.repeat(dirs, len(rho), axis=0),
                 (wdirs[:, None] * w[None, :]).ravel())
        values = _eval(u, nodes[0][:, None] * nodes[1]) * nodes[0] ** beta
        return _sum(nodes, values), T, tail

    return _estimate(compute, spec, True)


# ---- Derived fields ----

_derived: Dict[str, ScalarField] = {}
_derived_lock = threading.Lock()


def _fmt(value: float) -> str:
    return repr(float(value))


def _derived_key(kind: str, u: ScalarField, params: FracParams, spec: QuadratureSpec) -> str:
    return f"{kind}[{u.field_id}]|n={params.n}|s={_fmt(params.s)}|{quad.spec_key(spec)}"


def _feature_radius(u: ScalarField) -> float:
    return u.extent if u.compact else u.tail.radius


def _sampled_envelope(values_at: Callable[[np.ndarray], np.ndarray], u: ScalarField, power: float,
                      samples: int = 8) -> TailEnvelope:
    """Envelope (A, power, 2 R0) with A from sampled |F(y)| |y|^power, inflated by 2."""
    R0 = 2.0 * _feature_radius(u)
    rng = np.random.default_rng(0)
    directions = rng.standard_normal((samples, u.dim))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = R0 * 10.0 ** (np.arange(samples) / (samples - 1))
    values = np.abs(values_at(radii[:, None] * directions))
    return TailEnvelope(2.0 * float(np.max(values * radii ** power)), power, R0)


def _derived_field(kind: str, u: ScalarField, params: FracParams, spec: QuadratureSpec,
                   compute_one: Callable[[np.ndarray], float], power: float,
                   radial: bool, regularity: Regularity = Regularity.HOLDER) -> ScalarField:
    key = _derived_key(kind, u, params, spec)
    with _derived_lock:
        existing = _derived.get(key)
    if existing is not None:
        return existing
    cache = cache_for(key)

    def compute_many(points):
        return np.array([compute_one(p) for p in np.atleast_2d(points)])

    if radial:
        def evaluate(points):
            canonical = np.zeros_like(points)
            canonical[:, 0] = np.linalg.norm(points, axis=-1)
            return cache.get_many(canonical, compute_many)
    else:
        def evaluate(points):
            return cache.get_many(points, compute_many)

    field = ScalarField(
        field_id=f"{kind}[{u.field_id}]",
        dim=u.dim,
        evaluator=evaluate,
        regularity=regularity,
        tail=TailEnvelope(0.0, power, 1.0),
        interfaces=u.interfaces,
        length_scale=u.length_scale,
        min_scale=max(u.min_scale, spec.derived_min_scale * u.length_scale),
        radial=radial,
        derived=True,
    )
    field.tail = _sampled_envelope(evaluate, u, power)
    with _derived_lock:
        return _derived.setdefault(key, field)


def clear_derived():
    with _derived_lock:
        _derived.clear()


def frac_laplacian_field(u: ScalarField, params: FracParams, spec: QuadratureSpec) -> ScalarField:
    """y -> (-Δ)^s u(y), cached."""
    return _derived_field(
        "lap", u, params, spec,
        lambda y: frac_laplacian(u, y, params, spec, estimate=False).scalar,
        params.n + 2.0 * params.s, u.radial,
    )


def energy_density_field(u: ScalarField, params: FracParams, spec: QuadratureSpec) -> ScalarField:
    """y -> G_u(y), cached."""
    return _derived_field(
        "G", u, params, spec,
        lambda y: energy_pair(u, u, y, params, spec, estimate=False).scalar,
        params.n + 2.0 * params.s, u.radial,
    )


def partial_field(u: ScalarField, i: int, params: FracParams, spec: QuadratureSpec) -> ScalarField:
    """y -> ∂^s_i u(y), cached."""
    if not 0 <= i < u.dim:
        raise ParameterError("component index out of range", module="operators", context={"i": i})
    return _derived_field(
        f"d{i}", u, params, spec,
        lambda y: frac_gradient(u, y, params, spec, estimate=False, component=i).value,
        params.n + params.s, False,
    )


def gradient_field(u: ScalarField, params: FracParams, spec: QuadratureSpec) -> VectorField:
    return VectorField(f"grad_s[{u.field_id}]", [partial_field(u, i, params, spec) for i in range(u.dim)])


def gradient_norm_sq_field(u: ScalarField, params: FracParams, spec: QuadratureSpec) -> ScalarField:
    """y -> |∇^s u(y)|^2, assembled from the cached partials."""
    parts = [partial_field(u, i, params, spec) for i in range(u.dim)]
    return _derived_field(
        "gradsq", u, params, spec,
        lambda y: float(sum(float(np.atleast_1d(p(y[None, :]))[0]) ** 2 for p in parts)),
        2.0 * (params.n + params.s), u.radial,
    )


def gagliardo_energy(u: ScalarField, params: FracParams, spec: QuadratureSpec) -> OperatorValue:
    """∫ G_u = C_{n,s} [u]^2_{H^s}."""
    return weighted_integral(energy_density_field(u, params, spec), 0.0, params, spec)
