"""
Bochner-type identities for (-Δ)^s and ∇^s, their s -> 1 limits, and the
moment integrals behind those limits.

    (-Δ)^s G_u = 2 C ∫ (u(x)-u(y)) ((-Δ)^s u(x) - (-Δ)^s u(y)) K - C ∫ G_{w_z}(x) |z|^(-n-2s) dz
    (-Δ)^s |∇^s u|^2 = 2 <∇^s u, (-Δ)^s ∇^s u> - Σ_i G_{∂^s_i u}

with K = |x-y|^(-n-2s) and w_z(y) = u(y) - u(y-z). Every term is evaluated
by its own quadrature; nothing is shared between the two sides except the
cached derived fields.
"""
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from nonlocal_acf.core.errors import CostGuardError, EvaluationError, ParameterError
from nonlocal_acf.core.parallel import ordered_map
from nonlocal_acf.models.fields import ScalarField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec, RadialIntegrand
from nonlocal_acf.models.results import BochnerResidual, OperatorValue
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services import quadrature_service as quad
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import difference_field
from nonlocal_acf.services.functional_service import classical_gradient

logger = logging.getLogger(__name__)

DEFAULT_LIMIT_GRID = (0.9, 0.95, 0.99)


def _guard(params: FracParams, spec: QuadratureSpec):
    if params.n >= 2 and not spec.allow_high_cost:
        raise CostGuardError(
            "nested Bochner quadrature in dimension >= 2 needs allow_high_cost = true",
            context={"n": params.n},
        )


def _check_square(residual: BochnerResidual):
    if residual.term_square < -residual.combined_error:
        raise EvaluationError("negative square term beyond its error estimate", module="bochner",
                              context={"term_square": residual.term_square, "error": residual.combined_error})


# ---- Square term ----

def term_square(u: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                estimate: bool = True) -> OperatorValue:
    """C^2 ∬ (u(x)-u(x-z)-u(y)+u(y-z))^2 |x-y|^(-n-2s) |z|^(-n-2s) dy dz = C ∫ G_{w_z}(x) |z|^(-n-2s) dz.

    Outer variable z on rays: near |z| <= L graded toward 0 (G_{w_z}(x) ~ |z|^2),
    far part written as (G_{w_z}(x) - G_u(x)) plus the closed-form integral of G_u(x).
    """
    x = ops._point(x, u.dim)
    n, s, C = params.n, params.s, params.c_ns
    L = spec.split_radius
    G = ops.energy_density_field(u, params, spec)
    min_scale = max(u.min_scale, spec.derived_min_scale * u.length_scale)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)

    def g_w(z: np.ndarray) -> float:
        w = difference_field(u, z)
        return ops.energy_pair(w, w, x, params, spec, estimate=False).scalar

    def compute(m):
        Gx = float(G(x[None, :])[0])
        rho, w = quad.near_rule(0.0, L, 1.0 - 2.0 * s, spec, m, u.length_scale, min_scale)
        near = 0.0
        for theta, wt in zip(dirs, wdirs):
            values = np.array([g_w(r * theta) for r in rho])
            near += wt * float((values * rho ** (-1.0 - 2.0 * s)) @ w)
        far_nodes, T = ops._far_nodes(x, [u, G], spec, m, n + 2.0 * s)
        far = 0.0
        for r, theta, wt in zip(*far_nodes):
            far += wt * (g_w(-r * theta) - Gx) * r ** (-1.0 - 2.0 * s)
        analytic = Gx * params.surface_area * L ** (-2.0 * s) / (2.0 * s)
        tail = C * quad.tail_bound(G.tail, n + 2.0 * s, max(T, L), n)
        return C * (near + far + analytic), T, tail

    return ops._estimate(compute, spec, estimate)


def _radial_sample(rng: np.random.Generator, size: int, s: float, T: float) -> np.ndarray:
    """Mixture law: density ∝ ρ^(1-2s) on (0, 1] and ∝ ρ^(-1-2s) on [1, T], half each."""
    u = rng.random(size)
    inner = rng.random(size) < 0.5
    out = np.empty(size)
    out[inner] = u[inner] ** (1.0 / (2.0 - 2.0 * s))
    out[~inner] = (1.0 - u[~inner] * (1.0 - T ** (-2.0 * s))) ** (-1.0 / (2.0 * s))
    return out


def _radial_density(rho: np.ndarray, s: float, T: float) -> np.ndarray:
    inner = (2.0 - 2.0 * s) * rho ** (1.0 - 2.0 * s)
    outer = 2.0 * s * rho ** (-1.0 - 2.0 * s) / (1.0 - T ** (-2.0 * s))
    return 0.5 * np.where(rho <= 1.0, inner, outer)


def monte_carlo_term_square(u: ScalarField, x, params: FracParams, samples: int = 10 ** 6,
                            seed: int = 0, spec: Optional[QuadratureSpec] = None,
                            batch: int = 100000) -> Dict:
    """Importance-sampled estimate of the square term, independent of the quadrature."""
    spec = spec or QuadratureSpec()
    x = ops._point(x, u.dim)
    n, s, C = params.n, params.s, params.c_ns
    scale = u.length_scale
    G = ops.energy_density_field(u, params, spec)
    T = max(quad.truncation_radius(G.tail, n + 2.0 * s, spec.tail_tol, n), 2.0 * scale) / scale
    rng = np.random.default_rng(seed)
    area = params.surface_area

    def draw(size):
        rho = _radial_sample(rng, size, s, T)
        theta = rng.standard_normal((size, n))
        theta /= np.linalg.norm(theta, axis=-1, keepdims=True)
        # density of h = scale * rho * theta in R^n
        density = _radial_density(rho, s, T) / (area * rho ** (n - 1) * scale ** n)
        return scale * rho[:, None] * theta, density

    total, total_sq, done = 0.0, 0.0, 0
    while done < samples:
        size = min(batch, samples - done)
        z, pz = draw(size)
        h, ph = draw(size)
        y = x[None, :] + h
        xz, yz = x[None, :] - z, y - z
        diff = u(np.repeat(x[None, :], size, axis=0)) - u(xz) - u(y) + u(yz)
        kernel = np.linalg.norm(h, axis=-1) ** (-n - 2.0 * s) * np.linalg.norm(z, axis=-1) ** (-n - 2.0 * s)
        values = C * C * diff ** 2 * kernel / (pz * ph)
        total += float(values.sum())
        total_sq += float((values ** 2).sum())
        done += size
    mean = total / samples
    variance = max(total_sq / samples - mean ** 2, 0.0)
    return {"value": mean, "stderr": math.sqrt(variance / samples), "samples": samples, "seed": seed}


# ---- Residuals ----

def bochner_residual_G(u: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                       monte_carlo: bool = False, samples: int = 10 ** 6, seed: int = 0) -> BochnerResidual:
    """(-Δ)^s G_u against 2 <u, (-Δ)^s u>_C - square term, at x."""
    _guard(params, spec)
    x = ops._point(x, u.dim)
    G = ops.energy_density_field(u, params, spec)
    lap = ops.frac_laplacian_field(u, params, spec)
    lhs = ops.frac_laplacian(G, x, params, spec)
    cross = ops.energy_pair(u, lap, x, params, spec)
    square = term_square(u, x, params, spec)
    details = {
        "lhs_error": lhs.abs_error_estimate,
        "term_cross_error": 2.0 * cross.abs_error_estimate,
        "term_square_error": square.abs_error_estimate,
    }
    if monte_carlo:
        mc = monte_carlo_term_square(u, x, params, samples, seed, spec)
        details.update({"term_square_mc": mc["value"], "term_square_mc_stderr": mc["stderr"]})
    residual = BochnerResidual(
        lhs=lhs.scalar,
        term_cross=2.0 * cross.scalar,
        term_square=square.scalar,
        combined_error=lhs.abs_error_estimate + 2.0 * cross.abs_error_estimate + square.abs_error_estimate,
        details=details,
    )
    _check_square(residual)
    logger.info("Bochner(G) %s at %s: residual %.3e (rel %.3e)", u.field_id, x.tolist(),
                residual.residual, residual.relative_residual)
    return residual


def bochner_residual_grad(u: ScalarField, x, params: FracParams, spec: QuadratureSpec,
                          commuted: bool = False) -> BochnerResidual:
    """(-Δ)^s |∇^s u|^2 against 2 <∇^s u, (-Δ)^s ∇^s u> - Σ_i G_{∂^s_i u}.

    With `commuted`, (-Δ)^s ∂^s_i u is replaced by ∂^s_i (-Δ)^s u.
    """
    _guard(params, spec)
    x = ops._point(x, u.dim)
    gradsq = ops.gradient_norm_sq_field(u, params, spec)
    lhs = ops.frac_laplacian(gradsq, x, params, spec)
    lap = ops.frac_laplacian_field(u, params, spec) if commuted else None
    cross, cross_err, square, square_err = 0.0, 0.0, 0.0, 0.0
    for i in range(u.dim):
        part = ops.partial_field(u, i, params, spec)
        d = ops.frac_gradient(u, x, params, spec, component=i)
        if commuted:
            inner = ops.frac_gradient(lap, x, params, spec, component=i)
        else:
            inner = ops.frac_laplacian(part, x, params, spec)
        cross += 2.0 * d.scalar * inner.scalar
        cross_err += 2.0 * (abs(d.scalar) * inner.abs_error_estimate + abs(inner.scalar) * d.abs_error_estimate)
        g = ops.energy_density_G(part, x, params, spec)
        square += g.scalar
        square_err += g.abs_error_estimate
    residual = BochnerResidual(
        lhs=lhs.scalar,
        term_cross=cross,
        term_square=square,
        combined_error=lhs.abs_error_estimate + cross_err + square_err,
        details={"lhs_error": lhs.abs_error_estimate, "term_cross_error": cross_err,
                 "term_square_error": square_err, "commuted": float(commuted)},
    )
    _check_square(residual)
    logger.info("Bochner(grad%s) %s at %s: residual %.3e (rel %.3e)", ", commuted" if commuted else "",
                u.field_id, x.tolist(), residual.residual, residual.relative_residual)
    return residual


def commutation_check(u: ScalarField, points: Sequence, params: FracParams, spec: QuadratureSpec,
                      jobs: int = 1) -> Dict:
    """(-Δ)^s ∂^s_1 u against ∂^s_1 (-Δ)^s u at the given points."""
    _guard(params, spec)
    part = ops.partial_field(u, 0, params, spec)
    lap = ops.frac_laplacian_field(u, params, spec)

    def row(p):
        p = ops._point(p, u.dim)
        a = ops.frac_laplacian(part, p, params, spec)
        b = ops.frac_gradient(lap, p, params, spec, component=0)
        return {"point": p.tolist(), "lap_of_grad": a.scalar, "grad_of_lap": b.scalar,
                "abs_diff": abs(a.scalar - b.scalar),
                "error_estimate": a.abs_error_estimate + b.abs_error_estimate}

    rows = ordered_map(row, list(points), jobs)
    scale = max([max(abs(r["lap_of_grad"]), abs(r["grad_of_lap"])) for r in rows] + [0.0])
    for r in rows:
        r["relative_diff"] = r["abs_diff"] / scale if scale > 0 else 0.0
    return {"rows": rows, "scale": scale,
            "max_relative_diff": max((r["relative_diff"] for r in rows), default=0.0)}


def subharmonic_bridge_check(u: ScalarField, x, params: FracParams, spec: QuadratureSpec) -> Dict:
    """Where (-Δ)^s u = 0 near x: lhs <= |term_cross| + combined_error - term_square."""
    r = bochner_residual_G(u, x, params, spec)
    cross_error = r.details["term_cross_error"]
    bound = abs(r.term_cross) + r.combined_error - r.term_square
    return {
        **r.to_dict(),
        "cross_within_error": abs(r.term_cross) <= cross_error + 1e-12,
        "bound": bound,
        "holds": r.lhs <= bound,
    }


# ---- s -> 1 limits ----

def kernel_weight_mean(g: ScalarField, r: float, params: FracParams, spec: QuadratureSpec) -> OperatorValue:
    """a ∫_{B_r} (r^2 - |y|^2)^(-s) |y|^(2s-n) g(y) dy; the weight integrates to 1."""
    if not r > 0:
        raise ParameterError("radius must be positive", module="bochner", context={"r": r})
    n, s, a = params.n, params.s, params.a_ns
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    width = spec.resolution * min(g.length_scale, r)

    def integrand(rho, theta):
        return a * (r * r - rho ** 2) ** (-s) * rho ** (2.0 * s - 1.0) * ops._eval(g, rho[:, None] * theta[None, :])

    def compute(m):
        # singular at both ends: ρ^(2s-1) at 0, (r-ρ)^(-s) at r
        rho, w = quad.build_rule(0.0, r, spec, m, beta_a=2.0 * s - 1.0, beta_b=-s, max_width=width)
        total = sum(wt * float(integrand(rho, theta) @ w) for theta, wt in zip(dirs, wdirs))
        return total, r, 0.0

    return ops._estimate(compute, spec, True)


def sphere_average(g: ScalarField, r: float, spec: QuadratureSpec) -> float:
    dirs, wdirs = quad.angular_rule(g.dim, spec.angular_nodes)
    return float(ops._eval(g, r * dirs) @ wdirs) / float(wdirs.sum())


def _decreasing(errors: Sequence[float], slack: Sequence[float]) -> bool:
    return all(b <= a + ea + eb for a, b, ea, eb in zip(errors, errors[1:], slack, slack[1:]))


def kernel_limit_check(n: int, r: float, g: ScalarField, s_grid: Sequence[float],
                       spec: QuadratureSpec) -> Dict:
    target = sphere_average(g, r, spec)
    rows = []
    for s in s_grid:
        value = kernel_weight_mean(g, r, make_params(n, s), spec)
        rows.append({"s": float(s), "value": value.scalar, "target": target,
                     "abs_diff": abs(value.scalar - target), "error_estimate": value.abs_error_estimate})
    return {"rows": rows,
            "decreasing": _decreasing([r["abs_diff"] for r in rows], [r["error_estimate"] for r in rows]),
            "final_relative_diff": rows[-1]["abs_diff"] / abs(target) if target else rows[-1]["abs_diff"]}


def local_limit_check(u: ScalarField, x, s_grid: Sequence[float] = DEFAULT_LIMIT_GRID,
                      spec: Optional[QuadratureSpec] = None, v: Optional[ScalarField] = None,
                      kernel_field: Optional[ScalarField] = None, kernel_radius: float = 0.5) -> Dict:
    """Fractional quantities against their local limits along s -> 1.

    (a) energy_pair(u, v)/2 vs ∇u·∇v, (b) G_u/2 vs |∇u|^2,
    (c) square term vs 4 |D^2 u|^2, (d) kernel mean vs sphere average.
    """
    spec = spec or QuadratureSpec()
    n = u.dim
    x = ops._point(x, n)
    v = v or u
    grad_u = classical_gradient(u, x[None, :])[0]
    grad_v = classical_gradient(v, x[None, :])[0]
    hess = np.asarray(u.oracle("hess")(x[None, :]), dtype=float).reshape(n, n)
    targets = {
        "inner_product": float(grad_u @ grad_v),
        "energy_density": float(grad_u @ grad_u),
        "square": 4.0 * float(np.sum(hess ** 2)),
    }
    columns: Dict[str, List[Dict]] = {k: [] for k in targets}
    for s in s_grid:
        params = make_params(n, s)
        _guard(params, spec)
        pair = ops.energy_pair(u, v, x, params, spec)
        G = ops.energy_density_G(u, x, params, spec)
        sq = term_square(u, x, params, spec)
        for name, value, err in (("inner_product", 0.5 * pair.scalar, 0.5 * pair.abs_error_estimate),
                                 ("energy_density", 0.5 * G.scalar, 0.5 * G.abs_error_estimate),
                                 ("square", sq.scalar, sq.abs_error_estimate)):
            columns[name].append({"s": float(s), "value": value, "target": targets[name],
                                  "abs_diff": abs(value - targets[name]), "error_estimate": err})
        logger.debug("limits s=%s: G/2=%.8g (target %.8g)", s, 0.5 * G.scalar, targets["energy_density"])
    result = {}
    for name, rows in columns.items():
        target = targets[name]
        last = rows[-1]["abs_diff"]
        result[name] = {
            "rows": rows,
            "decreasing": _decreasing([r["abs_diff"] for r in rows], [r["error_estimate"] for r in rows]),
            "final_relative_diff": last / abs(target) if target else last,
        }
    result["kernel"] = kernel_limit_check(n, kernel_radius, kernel_field or u, s_grid, spec)
    return result


# ---- Moment integrals ----

def _binomial(n: int, k: int) -> int:
    return math.comb(n, k) if k <= n else 1


def _check_multi_index(n: int, k: int, alpha: Sequence[int]):
    if len(alpha) != n or any(a < 0 for a in alpha) or sum(alpha) != k:
        raise ParameterError("multi-index must have n nonnegative entries summing to k", module="bochner",
                             context={"n": n, "k": k, "alpha": list(alpha)})
    if k not in (1, 2, 3):
        raise ParameterError("moment order k must be 1, 2 or 3", module="bochner", context={"k": k})


def moment_integral(n: int, k: int, alpha: Sequence[int], s: float) -> float:
    """nω_n / (2 C(n, k) (k - s)), C(n, k) taken as 1 for k > n."""
    params = make_params(n, s)
    _check_multi_index(n, k, alpha)
    return params.surface_area / (2.0 * _binomial(n, k) * (k - s))


def moment_quadrature(n: int, k: int, alpha: Sequence[int], s: float,
                      spec: Optional[QuadratureSpec] = None) -> Dict:
    """Companion quadratures on B_1.

    `value`: (1/C(n,k)) ∫_{B_1} |h|^(2k-n-2s) dh, the rotation-averaged form.
    `monomial`: ∫_{B_1} (h^α)^2 |h|^(-n-2s) dh.
    """
    spec = spec or QuadratureSpec()
    make_params(n, s)
    _check_multi_index(n, k, alpha)
    power = 2.0 * k - 1.0 - 2.0 * s
    radial = quad.integrate_radial(
        RadialIntegrand(beta=power, evaluator=lambda rho, theta: rho ** power, dim=n), spec, 1.0)
    exponents = np.asarray(alpha, dtype=float) * 2.0
    monomial = quad.integrate_radial(
        RadialIntegrand(beta=power, evaluator=lambda rho, theta: rho ** power * float(np.prod(theta ** exponents)),
                        dim=n),
        spec, 1.0)
    return {
        "value": radial.value / _binomial(n, k),
        "error_estimate": radial.error_estimate / _binomial(n, k),
        "monomial": monomial.value,
    }


def moments_table(grid_n: Sequence[int] = (1, 2, 3), grid_k: Sequence[int] = (1, 2, 3),
                  grid_s: Sequence[float] = (0.25, 0.5, 0.75),
                  spec: Optional[QuadratureSpec] = None) -> List[Dict]:
    rows = []
    for n in grid_n:
        for k in grid_k:
            alpha = [k] + [0] * (n - 1)
            for s in grid_s:
                closed = moment_integral(n, k, alpha, s)
                numeric = moment_quadrature(n, k, alpha, s, spec)
                rows.append({"n": n, "k": k, "alpha": alpha, "s": s, "closed_form": closed,
                             "quadrature": numeric["value"], "monomial": numeric["monomial"],
                             "rel_diff": abs(numeric["value"] - closed) / closed})
    return rows
