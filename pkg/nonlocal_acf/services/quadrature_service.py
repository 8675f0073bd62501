"""
Singular-integral engine.

Panel rules are Gauss-Legendre; algebraic endpoint singularities are handled
by geometric meshes graded toward the singular point, with the innermost
panel [0, eps] replaced by a single node at eps of weight eps/(1+beta)
(exact for a pure power). Integrals over R^n are factored into rays: a
symmetric angular rule times one-dimensional rules in the radius, with
per-ray breakpoints from exact ray/sphere intersections.
"""
from functools import lru_cache
import hashlib
import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from nonlocal_acf.core.errors import EvaluationError, NonIntegrableError, ParameterError
from nonlocal_acf.models.fields import Ball, TailEnvelope
from nonlocal_acf.models.quadrature import QuadratureResult, QuadratureSpec, RadialIntegrand
from nonlocal_acf.models.results import ConvergenceReport

logger = logging.getLogger(__name__)

# n * omega_n, the measure of the unit sphere; equals the sum of angular weights.
SPHERE_AREA = {1: 2.0, 2: 2.0 * math.pi, 3: 4.0 * math.pi}

Rule = Tuple[np.ndarray, np.ndarray]
EMPTY_RULE: Rule = (np.empty(0), np.empty(0))


# ---- One-dimensional rules ----

@lru_cache(maxsize=None)
def gauss_legendre(m: int) -> Rule:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    x, w = special.roots_legendre(m)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_jacobi_weighted(m: int, beta: float) -> Rule:
    """Nodes/weights on [0, 1] for the weight t^beta."""
    x, w = special.roots_jacobi(m, 0.0, beta)
    t = (x + 1.0) / 2.0
    return t, w / 2.0 ** (1.0 + beta)


def panel_rule(knots: np.ndarray, m: int) -> Rule:
    """Composite Gauss rule with `m` nodes on each panel [knots[i], knots[i+1]]."""
    knots = np.asarray(knots, dtype=float)
    if knots.size < 2:
        return EMPTY_RULE
    x, w = gauss_legendre(m)
    a, b = knots[:-1], knots[1:]
    half = (b - a) / 2.0
    mid = (a + b) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def subdivide(knots: np.ndarray, max_width: float) -> np.ndarray:
    """Split every panel wider than `max_width` into equal pieces."""
    if not math.isfinite(max_width) or max_width <= 0:
        return knots
    pieces = [knots[:1]]
    for a, b in zip(knots[:-1], knots[1:]):
        count = max(1, int(math.ceil((b - a) / max_width - 1e-9)))
        pieces.append(np.linspace(a, b, count + 1)[1:])
    return np.concatenate(pieces)


def _check_beta(beta: Optional[float]):
    if beta is not None and beta <= -1.0:
        raise NonIntegrableError(
            "kernel exponent makes the integral divergent", context={"beta": beta}
        )


def graded_offsets(length: float, spec: QuadratureSpec, max_width: float,
                   min_width: float) -> Tuple[np.ndarray, float]:
    """Knots in [eps, length] graded toward 0, and the cutoff eps."""
    q = spec.grading_ratio
    eps = max(length * q ** spec.panels, min(min_width, length / 2.0))
    count = max(1, int(math.floor(math.log(eps / length) / math.log(q))))
    distances = length * q ** np.arange(count + 1)
    distances = distances[distances > eps * (1.0 + 1e-12)]
    knots = np.concatenate(([eps], distances[::-1]))
    return subdivide(knots, max_width), eps


def _graded_half(length: float, beta: float, spec: QuadratureSpec, m: int,
                 max_width: float, min_width: float) -> Rule:
    """Rule on [0, length] graded toward 0, as offsets from the singular end."""
    knots, eps = graded_offsets(length, spec, max_width, min_width)
    nodes, weights = panel_rule(knots, m)
    # Innermost panel: one node at eps carrying the exact weight for c*rho^beta.
    nodes = np.concatenate(([eps], nodes))
    weights = np.concatenate(([eps / (1.0 + beta)], weights))
    return nodes, weights


def build_rule(a: float, b: float, spec: QuadratureSpec, m: Optional[int] = None, *,
               beta_a: Optional[float] = None, beta_b: Optional[float] = None,
               interior: Iterable[float] = (), max_width: float = math.inf,
               min_width: float = 0.0) -> Rule:
    """Quadrature rule on [a, b].

    `beta_a`/`beta_b` request grading toward an endpoint with integrand
    ~ |t - endpoint|^beta; `interior` points are breakpoints graded from both
    sides (Hölder interfaces, support boundaries).
    """
    m = m or spec.nodes_per_panel
    _check_beta(beta_a)
    _check_beta(beta_b)
    if not b > a:
        return EMPTY_RULE
    tiny = 1e-12 * max(1.0, abs(a), abs(b))
    cuts = sorted(t for t in interior if a + tiny < t < b - tiny)
    knots = [a, *cuts, b]
    parts: List[Rule] = []
    for i, (lo, hi) in enumerate(zip(knots[:-1], knots[1:])):
        left = beta_a if i == 0 else 0.0
        right = beta_b if i == len(knots) - 2 else 0.0
        parts.append(_interval_rule(lo, hi, left, right, spec, m, max_width, min_width))
    return _concat(parts)


def _interval_rule(lo: float, hi: float, left: Optional[float], right: Optional[float],
                   spec: QuadratureSpec, m: int, max_width: float, min_width: float) -> Rule:
    length = hi - lo
    if left is None and right is None:
        return panel_rule(subdivide(np.array([lo, hi]), max_width), m)
    if left is not None and right is not None:
        mid = 0.5 * (lo + hi)
        return _concat([
            _interval_rule(lo, mid, left, None, spec, m, max_width, min_width),
            _interval_rule(mid, hi, None, right, spec, m, max_width, min_width),
        ])
    if left is not None:
        t, w = _graded_half(length, left, spec, m, max_width, min_width)
        return lo + t, w
    t, w = _graded_half(length, right, spec, m, max_width, min_width)
    return hi - t[::-1], w[::-1]


def _concat(parts: Sequence[Rule]) -> Rule:
    parts = [p for p in parts if p[0].size]
    if not parts:
        return EMPTY_RULE
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def geometric_knots(a: float, b: float, count: int) -> np.ndarray:
    return a * (b / a) ** (np.arange(count + 1) / count)


def far_panel_count(a: float, b: float, spec: QuadratureSpec) -> int:
    if not b > a:
        return 0
    return max(spec.far_panels, int(math.ceil(math.log(b / a) / math.log1p(spec.resolution))))


# ---- Angular rules ----

@lru_cache(maxsize=None)
def angular_rule(n: int, angular_nodes: int = 64) -> Rule:
    """Symmetric rule on the unit sphere S^{n-1}.

    Directions are ordered so that dirs[k + K/2] = -dirs[k]; weights sum to
    the sphere measure n*omega_n.
    """
    if n == 1:
        half = np.array([[1.0]])
        w = np.array([1.0])
    elif n == 2:
        m = angular_nodes
        phi = 2.0 * math.pi * np.arange(m // 2) / m
        half = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        w = np.full(m // 2, 2.0 * math.pi / m)
    elif n == 3:
        polar, azimuth = angular_nodes // 4, angular_nodes // 2
        t, wt = gauss_legendre(polar)
        keep = t > 0
        t, wt = t[keep], wt[keep]
        phi = 2.0 * math.pi * np.arange(azimuth) / azimuth
        tt, pp = np.meshgrid(t, phi, indexing="ij")
        sin_t = np.sqrt(1.0 - tt ** 2)
        half = np.stack([sin_t * np.cos(pp), sin_t * np.sin(pp), tt], axis=-1).reshape(-1, 3)
        w = (wt[:, None] * np.full(azimuth, 2.0 * math.pi / azimuth)[None, :]).ravel()
    else:
        raise ParameterError("dimension must be 1, 2 or 3", module="quadrature", context={"n": n})
    dirs = np.concatenate([half, -half])
    weights = np.concatenate([w, w])
    dirs.setflags(write=False)
    weights.setflags(write=False)
    return dirs, weights


def random_rotation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random rotation matrix (det = +1)."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def directions(n: int, spec: QuadratureSpec, rotation: Optional[np.ndarray] = None) -> Rule:
    dirs, w = angular_rule(n, spec.angular_nodes)
    if rotation is not None:
        dirs = dirs @ np.asarray(rotation).T
    return dirs, w


# ---- Tails ----

def truncation_radius(envelope: TailEnvelope, kernel_decay: float, tol: float, n: int) -> float:
    """Radius T beyond which the envelope tail integral is below `tol`.

    Uses the closed-form bound A * n*omega_n * T^(n-p-k) / (p+k-n).
    """
    if envelope.compact:
        return envelope.radius
    excess = envelope.power + kernel_decay - n
    if excess <= 0:
        raise NonIntegrableError(
            "envelope and kernel give a non-integrable tail",
            context={"power": envelope.power, "kernel_decay": kernel_decay, "n": n},
        )
    amplitude = abs(envelope.amplitude)
    if amplitude == 0:
        return envelope.radius
    T = (amplitude * SPHERE_AREA[n] / (excess * tol)) ** (1.0 / excess)
    return max(T, envelope.radius)


def tail_bound(envelope: TailEnvelope, kernel_decay: float, T: float, n: int) -> float:
    """Closed-form bound of the tail integral beyond T."""
    if envelope.compact:
        return 0.0 if T >= envelope.radius else math.inf
    excess = envelope.power + kernel_decay - n
    if excess <= 0:
        return math.inf
    return abs(envelope.amplitude) * SPHERE_AREA[n] * T ** (-excess) / excess


# ---- Rays ----

def sphere_crossings(x: np.ndarray, theta: np.ndarray, ball: Ball) -> Optional[Tuple[float, float]]:
    """Parameters t_in < t_out where x + t*theta meets the sphere of `ball`."""
    d = np.asarray(x, dtype=float) - np.asarray(ball.center)
    b = float(d @ theta)
    disc = b * b - (float(d @ d) - ball.radius ** 2)
    if disc <= 0:
        return None
    root = math.sqrt(disc)
    return -b - root, -b + root


def interface_hits(x: np.ndarray, theta: np.ndarray, balls: Sequence[Ball]) -> List[float]:
    hits: List[float] = []
    for ball in balls:
        crossing = sphere_crossings(x, theta, ball)
        if crossing is not None:
            hits.extend(t for t in crossing if t > 0)
    return hits


def cluster_knots(center: float, width: float, spec: QuadratureSpec) -> np.ndarray:
    """Knots accumulating geometrically on both sides of an interface."""
    offsets = width * spec.grading_ratio ** np.arange(1, spec.panels // 2 + 1)
    return np.concatenate([center - offsets, [center], center + offsets])


def far_knots(x: np.ndarray, theta: np.ndarray, fields: Sequence, start: float, spec: QuadratureSpec,
              kernel_decay: float, n: int) -> Tuple[np.ndarray, float]:
    """Breakpoints along the ray x + t*theta for t >= start.

    Compactly supported fields contribute uniform knots on their chords,
    other fields a geometric mesh up to |x| + T. Returns the knots and the
    truncation radius used.
    """
    knots: List[np.ndarray] = []
    interfaces: List[Tuple[float, float]] = []
    T_used = 0.0
    for f in fields:
        width = spec.resolution * f.length_scale
        if f.compact:
            for ball in f.supports:
                crossing = sphere_crossings(x, theta, ball)
                if crossing is None or crossing[1] <= start:
                    continue
                lo, hi = max(start, crossing[0]), crossing[1]
                count = max(2, int(math.ceil(2.0 * ball.radius / width)))
                knots.append(np.linspace(lo, hi, count + 1))
                T_used = max(T_used, hi)
        else:
            T = truncation_radius(f.tail, kernel_decay, spec.tail_tol, n)
            reach = float(np.linalg.norm(x))
            hi = reach + T
            if hi > start:
                knots.append(geometric_knots(start, hi, far_panel_count(start, hi, spec)))
                # uniform knots where the field still has structure
                dense = min(hi, reach + f.tail.radius)
                if dense > start:
                    knots.append(np.linspace(start, dense, int(math.ceil((dense - start) / width)) + 1))
                T_used = max(T_used, hi)
        for t in interface_hits(x, theta, getattr(f, "interfaces", ())):
            if t > start:
                interfaces.append((t, width))
    if not knots:
        return np.empty(0), T_used
    merged = np.concatenate(knots)
    lo, hi = merged.min(), merged.max()
    for t, width in interfaces:
        if lo < t < hi:
            merged = np.concatenate([merged, cluster_knots(t, min(width, t - start), spec)])
    merged = np.unique(np.clip(merged, lo, hi))
    return merged, T_used


def far_rule(x: np.ndarray, theta: np.ndarray, fields: Sequence, start: float, spec: QuadratureSpec,
             m: int, kernel_decay: float, n: int) -> Tuple[Rule, float]:
    """Gauss rule on the knots of `far_knots`."""
    knots, T_used = far_knots(x, theta, fields, start, spec, kernel_decay, n)
    return panel_rule(knots, m), T_used


def near_rule(start: float, stop: float, beta: Optional[float], spec: QuadratureSpec, m: int,
              length_scale: float, min_scale: float, interior: Sequence[float] = ()) -> Rule:
    """Rule on [start, stop] graded toward `start`."""
    max_width = spec.resolution * length_scale
    if not interior:
        return _cached_near(start, stop, beta, spec, m, max_width, min_scale)
    return build_rule(start, stop, spec, m, beta_a=beta, interior=interior,
                      max_width=max_width, min_width=min_scale)


@lru_cache(maxsize=4096)
def _cached_near(start, stop, beta, spec, m, max_width, min_scale) -> Rule:
    nodes, weights = build_rule(start, stop, spec, m, beta_a=beta, max_width=max_width, min_width=min_scale)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


# ---- Polar integration ----

def radial_rule(singular_radius: float, outer_radius: float, beta: float, spec: QuadratureSpec,
                m: Optional[int] = None, length_scale: Optional[float] = None) -> Rule:
    max_width = spec.resolution * (length_scale or outer_radius)
    if singular_radius <= 0.0:
        return build_rule(0.0, outer_radius, spec, m, beta_a=beta, max_width=max_width)
    if singular_radius >= outer_radius:
        return build_rule(0.0, outer_radius, spec, m, beta_b=beta, max_width=max_width)
    return _concat([
        build_rule(0.0, singular_radius, spec, m, beta_b=beta, max_width=max_width),
        build_rule(singular_radius, outer_radius, spec, m, beta_a=beta, max_width=max_width),
    ])


def _polar_sum(integrand: RadialIntegrand, rule: Rule, dirs: np.ndarray, wdirs: np.ndarray) -> float:
    rho, w = rule
    total = 0.0
    for theta, wt in zip(dirs, wdirs):
        values = np.asarray(integrand.evaluator(rho, theta), dtype=float)
        if not np.all(np.isfinite(values)):
            raise EvaluationError("integrand returned non-finite values", module="quadrature")
        total += wt * float(values @ w)
    return total


def integrate_radial(integrand: RadialIntegrand, spec: QuadratureSpec, outer_radius: float,
                     rotation: Optional[np.ndarray] = None) -> QuadratureResult:
    """∫_{S^{n-1}} ∫_0^outer f(ρ, θ) dρ dθ with grading toward the singular radius.

    The error estimate is the difference between the full rule and the
    half-order companion.
    """
    _check_beta(integrand.beta)
    if not outer_radius > integrand.singular_radius:
        raise ParameterError(
            "outer radius must exceed the singular radius", module="quadrature",
            context={"outer_radius": outer_radius, "singular_radius": integrand.singular_radius},
        )
    dirs, wdirs = directions(integrand.dim, spec, rotation)
    full = radial_rule(integrand.singular_radius, outer_radius, integrand.beta, spec)
    coarse = radial_rule(integrand.singular_radius, outer_radius, integrand.beta, spec,
                         m=spec.coarse().nodes_per_panel)
    value = _polar_sum(integrand, full, dirs, wdirs)
    coarse_value = _polar_sum(integrand, coarse, dirs, wdirs)
    return QuadratureResult(
        value=value,
        error_estimate=abs(value - coarse_value),
        evaluations=(full[0].size + coarse[0].size) * len(dirs),
        truncation_radius=outer_radius,
    )


def _substitution_reference(integrand: RadialIntegrand, outer_radius: float, spec: QuadratureSpec) -> float:
    """Oracle for singular_radius = 0: ρ = R t^γ with γ = 1/(1+β) removes the endpoint power."""
    gamma = 1.0 / (1.0 + integrand.beta)
    dirs, wdirs = angular_rule(integrand.dim, spec.angular_nodes)
    total = 0.0
    for theta, wt in zip(dirs, wdirs):
        def g(t, theta=theta):
            rho = outer_radius * t ** gamma
            jac = outer_radius * gamma * t ** (gamma - 1.0)
            return float(integrand.evaluator(np.array([rho]), theta)[0]) * jac
        value, _ = integrate.quad(g, 0.0, 1.0, epsabs=1e-15, epsrel=1e-13, limit=400)
        total += wt * value
    return total


def self_check(spec: QuadratureSpec, integrand: RadialIntegrand, outer_radius: float = 1.0,
               levels: int = 3, reference: Optional[float] = None) -> ConvergenceReport:
    """Resolution-doubling self-check with observed convergence orders."""
    _check_beta(integrand.beta)
    level = spec.model_copy(update={
        "panels": max(4, spec.panels // 4),
        "nodes_per_panel": max(4, spec.nodes_per_panel // 2),
    })
    values = []
    for _ in range(levels):
        values.append(integrate_radial(integrand, level, outer_radius).value)
        level = level.model_copy(update={
            "panels": 2 * level.panels,
            "nodes_per_panel": 2 * level.nodes_per_panel,
        })
    if reference is None:
        if integrand.singular_radius == 0.0:
            reference = _substitution_reference(integrand, outer_radius, spec)
        else:
            reference = integrate_radial(integrand, level, outer_radius).value
    errors = [abs(v - reference) for v in values]
    orders = []
    for e0, e1 in zip(errors, errors[1:]):
        orders.append(math.log2(e0 / e1) if e0 > 0 and e1 > 0 else 0.0)
    logger.debug("self-check values=%s errors=%s", values, errors)
    return ConvergenceReport(values=values, errors=errors, observed_orders=orders, reference=reference)


def spec_key(spec: QuadratureSpec) -> str:
    """Short stable digest of a spec, used in derived-field cache keys."""
    return hashlib.sha1(spec.model_dump_json().encode("utf-8")).hexdigest()[:12]
