"""
Catalog of test fields.

Every field carries its decay envelope, regularity class and, where one is
known, closed-form oracles (gradient, Hessian, fractional Laplacian, energy
density, fractional gradient). Fields are addressable by string id:

    gaussian:w=1   bump:r=1   xbump:r=1   constant:c=1   phi_s
    poisson:r=0.5;g=<id>
    scaled:lam=2;<id>   shifted:a=0.1,0.2;<id>   times:c=2;<id>   square:<id>
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy import integrate, special

from nonlocal_acf.core.cache import cache_for
from nonlocal_acf.core.enums import Regularity
from nonlocal_acf.core.errors import FieldError, ParameterError
from nonlocal_acf.models.fields import Ball, ScalarField, TailEnvelope, as_points
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.services import quadrature_service as quad

logger = logging.getLogger(__name__)


def _fmt(value: float) -> str:
    return repr(float(value))


def _radius(points: np.ndarray) -> np.ndarray:
    return np.linalg.norm(points, axis=-1)


# ---- Gaussian ----

def _gaussian_frac_power(points: np.ndarray, n: int, width: float, sigma: float) -> np.ndarray:
    """(-Δ)^σ exp(-|x|^2/(2w^2)) via Kummer's function; σ > -n/2."""
    z = -_radius(points) ** 2 / (2.0 * width ** 2)
    scale = 2.0 ** sigma * width ** (-2.0 * sigma) * special.gamma(n / 2.0 + sigma) / special.gamma(n / 2.0)
    return scale * special.hyp1f1(n / 2.0 + sigma, n / 2.0, z)


def gaussian_fourier_laplacian(points: np.ndarray, n: int, width: float, s: float) -> np.ndarray:
    """(-Δ)^s of the Gaussian by the radial (Hankel) inverse Fourier integral."""
    nu = n / 2.0 - 1.0
    upper = 40.0 / width
    out = []
    for r in _radius(as_points(points, n)):
        if r < 1e-12:
            value, _ = integrate.quad(
                lambda k: k ** (2.0 * s + n - 1.0) * math.exp(-(width * k) ** 2 / 2.0),
                0.0, upper, epsabs=1e-14, epsrel=1e-12, limit=200,
            )
            value *= width ** n / (2.0 ** nu * special.gamma(n / 2.0))
        else:
            value, _ = integrate.quad(
                lambda k: k ** (2.0 * s + n / 2.0) * math.exp(-(width * k) ** 2 / 2.0) * special.jv(nu, k * r),
                0.0, upper, epsabs=1e-14, epsrel=1e-12, limit=400,
            )
            value *= width ** n * r ** (-nu)
        out.append(value)
    return np.asarray(out)


def gaussian_field(n: int, width: float) -> ScalarField:
    if not width > 0:
        raise ParameterError("gaussian width must be positive", module="fields", context={"width": width})
    w2 = width ** 2

    def evaluate(points):
        return np.exp(-_radius(points) ** 2 / (2.0 * w2))

    def grad(points, params=None):
        points = as_points(points, n)
        return -points / w2 * evaluate(points)[:, None]

    def hess(points, params=None):
        points = as_points(points, n)
        u = evaluate(points)
        outer = points[:, :, None] * points[:, None, :]
        return u[:, None, None] * (outer / w2 ** 2 - np.eye(n)[None] / w2)

    def frac_laplacian(points, params):
        return _gaussian_frac_power(as_points(points, n), n, width, params.s)

    def energy_density(points, params):
        points = as_points(points, n)
        lap = _gaussian_frac_power(points, n, width, params.s)
        lap_sq = _gaussian_frac_power(points, n, width / math.sqrt(2.0), params.s)
        return 2.0 * evaluate(points) * lap - lap_sq

    def frac_gradient(points, params):
        # ∇^s = ∇ (-Δ)^((s-1)/2)
        points = as_points(points, n)
        sigma = (params.s - 1.0) / 2.0
        a, b = n / 2.0 + sigma, n / 2.0
        z = -_radius(points) ** 2 / (2.0 * w2)
        scale = 2.0 ** sigma * width ** (-2.0 * sigma) * special.gamma(a) / special.gamma(b)
        dF = scale * (a / b) * special.hyp1f1(a + 1.0, b + 1.0, z)
        return dF[:, None] * (-points / w2)

    def gagliardo(params):
        return n * math.pi ** (n / 2.0) / special.gamma(n / 2.0 + 1.0) * special.gamma(n / 2.0 + params.s) * width ** (n - 2.0 * params.s)

    return ScalarField(
        field_id=f"gaussian:w={_fmt(width)}",
        dim=n,
        evaluator=evaluate,
        regularity=Regularity.C4,
        # max of exp(-y^2/2w^2) y^4 over |y| >= 5w sits at |y| = 5w
        tail=TailEnvelope(math.exp(-12.5) * (5.0 * width) ** 4, 4.0, 5.0 * width),
        length_scale=width,
        radial=True,
        oracles={
            "grad": grad, "hess": hess, "frac_laplacian": frac_laplacian,
            "frac_laplacian_fourier": lambda p, params: gaussian_fourier_laplacian(p, n, width, params.s),
            "G": energy_density, "frac_gradient": frac_gradient, "gagliardo": gagliardo,
        },
    )


# ---- Compactly supported bumps ----

def _bump_parts(points: np.ndarray, radius: float):
    q = _radius(points) ** 2 / radius ** 2
    inside = q < 1.0
    u = np.zeros_like(q)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        u[inside] = np.exp(1.0 - 1.0 / (1.0 - q[inside]))
    return q, inside, u


def _bump_grad(points: np.ndarray, radius: float) -> np.ndarray:
    q, inside, u = _bump_parts(points, radius)
    g = np.zeros_like(q)
    g[inside] = -2.0 / (radius ** 2 * (1.0 - q[inside]) ** 2)
    return (u * g)[:, None] * points


def _bump_hess(points: np.ndarray, radius: float) -> np.ndarray:
    n = points.shape[1]
    q, inside, u = _bump_parts(points, radius)
    g = np.zeros_like(q)
    h = np.zeros_like(q)
    g[inside] = -2.0 / (radius ** 2 * (1.0 - q[inside]) ** 2)
    h[inside] = -8.0 / (radius ** 4 * (1.0 - q[inside]) ** 3)
    outer = points[:, :, None] * points[:, None, :]
    return u[:, None, None] * ((g ** 2 + h)[:, None, None] * outer + g[:, None, None] * np.eye(n)[None])


def bump_field(n: int, support_radius: float) -> ScalarField:
    """exp(1 - 1/(1 - |x/r|^2)) in B_r, zero outside."""
    if not support_radius > 0:
        raise ParameterError("support radius must be positive", module="fields", context={"r": support_radius})
    r = support_radius
    return ScalarField(
        field_id=f"bump:r={_fmt(r)}",
        dim=n,
        evaluator=lambda points: _bump_parts(points, r)[2],
        regularity=Regularity.SMOOTH_COMPACT,
        tail=TailEnvelope(1.0, math.inf, r),
        supports=(Ball.centered(n, r),),
        length_scale=r / 2.0,
        radial=True,
        oracles={
            "grad": lambda p, params=None: _bump_grad(as_points(p, n), r),
            "hess": lambda p, params=None: _bump_hess(as_points(p, n), r),
        },
    )


def xbump_field(n: int, support_radius: float) -> ScalarField:
    """x_1 times the bump; odd in x_1."""
    if not support_radius > 0:
        raise ParameterError("support radius must be positive", module="fields", context={"r": support_radius})
    r = support_radius
    e1 = np.eye(n)[0]

    def grad(points, params=None):
        points = as_points(points, n)
        u = _bump_parts(points, r)[2]
        return u[:, None] * e1[None, :] + points[:, :1] * _bump_grad(points, r)

    def hess(points, params=None):
        points = as_points(points, n)
        du = _bump_grad(points, r)
        cross = e1[None, :, None] * du[:, None, :] + du[:, :, None] * e1[None, None, :]
        return cross + points[:, 0][:, None, None] * _bump_hess(points, r)

    return ScalarField(
        field_id=f"xbump:r={_fmt(r)}",
        dim=n,
        evaluator=lambda points: points[:, 0] * _bump_parts(points, r)[2],
        regularity=Regularity.SMOOTH_COMPACT,
        tail=TailEnvelope(r, math.inf, r),
        supports=(Ball.centered(n, r),),
        length_scale=r / 2.0,
        oracles={"grad": grad, "hess": hess},
    )


def constant_field(n: int, value: float) -> ScalarField:
    def zeros(points, params=None):
        return np.zeros(as_points(points, n).shape[0])

    def zero_vectors(points, params=None):
        return np.zeros(as_points(points, n).shape)

    return ScalarField(
        field_id=f"constant:c={_fmt(value)}",
        dim=n,
        evaluator=lambda points: np.full(points.shape[0], float(value)),
        regularity=Regularity.C4,
        tail=TailEnvelope(abs(value), 0.0, 1.0),
        radial=True,
        oracles={
            "grad": zero_vectors,
            "hess": lambda p, params=None: np.zeros(as_points(p, n).shape + (n,)),
            "frac_laplacian": zeros, "G": zeros, "frac_gradient": zero_vectors,
        },
    )


def fundamental_solution_field(params: FracParams) -> ScalarField:
    """Φ_s(x) = κ_{n,s} |x|^(2s-n), singular at the origin."""
    if not params.has_kappa:
        raise FieldError("fundamental solution undefined for 2s = n", context={"n": params.n, "s": params.s})
    n, s, kappa = params.n, params.s, params.kappa_ns
    origin = (0.0,) * n
    return ScalarField(
        field_id="phi_s",
        dim=n,
        evaluator=lambda points: kappa * _radius(points) ** (2.0 * s - n),
        regularity=Regularity.C4,
        tail=TailEnvelope(abs(kappa), n - 2.0 * s, 1.0),
        singular_points=(origin,),
        radial=True,
        metadata={"pole_exponent": 2.0 * s - n},
        oracles={
            # s-harmonic away from the pole
            "frac_laplacian": lambda p, prm=None: np.zeros(as_points(p, n).shape[0]),
        },
    )


# ---- Dirichlet solution in a ball ----

def _exterior_nodes(params: FracParams, ball: Ball, g: ScalarField, spec: QuadratureSpec):
    """Nodes/weights on R^n \\ B_r (ball centered at 0) for the Poisson integral."""
    n, s, r = params.n, params.s, ball.radius
    origin = np.zeros(n)
    dirs, wdirs = quad.angular_rule(n, spec.angular_nodes)
    points, weights = [], []
    for theta, wt in zip(dirs, wdirs):
        hits = [t for t in quad.interface_hits(origin, theta, g.interfaces) if r < t < 2.0 * r]
        near = quad.build_rule(r, 2.0 * r, spec, beta_a=-s, interior=hits,
                               max_width=spec.resolution * min(r, g.length_scale))
        (far_nodes, far_weights), _ = quad.far_rule(origin, theta, [g], 2.0 * r, spec,
                                                   spec.nodes_per_panel, n + 2.0 * s, n)
        rho = np.concatenate([near[0], far_nodes])
        w = np.concatenate([near[1], far_weights])
        points.append(rho[:, None] * theta[None, :])
        weights.append(wt * w * rho ** (n - 1))
    return np.concatenate(points), np.concatenate(weights)


def poisson_harmonic_field(params: FracParams, ball: Ball, g: ScalarField,
                           spec: Optional[QuadratureSpec] = None) -> ScalarField:
    """Solution of (-Δ)^s u = 0 in B_r, u = g outside, by the Poisson kernel."""
    from nonlocal_acf.services.operator_service import poisson_kernel_values

    spec = spec or QuadratureSpec()
    if any(abs(c) > 0 for c in ball.center):
        raise ParameterError("Poisson field requires an origin-centered ball", module="fields")
    if g.singular:
        raise FieldError("exterior data must be locally bounded", context={"g": g.field_id})
    # L^1_s check; raises for non-integrable envelopes
    quad.truncation_radius(g.tail, params.n + 2.0 * params.s, spec.tail_tol, params.n)
    nodes, weights = _exterior_nodes(params, ball, g, spec)
    data = weights * g(nodes)

    def evaluate(points):
        points = np.atleast_2d(points)
        out = g(points) if len(points) else np.empty(0)
        out = np.atleast_1d(np.asarray(out, dtype=float)).copy()
        inside = ball.contains(points)
        for start in range(0, int(inside.sum()), 256):
            idx = np.flatnonzero(inside)[start:start + 256]
            kernel = poisson_kernel_values(points[idx], nodes, ball, params)
            out[idx] = kernel @ data
        return out

    field_id = f"poisson:r={_fmt(ball.radius)};g={g.field_id}"
    supports = tuple(g.supports) + (ball,) if g.compact else ()
    return ScalarField(
        field_id=field_id,
        dim=params.n,
        evaluator=evaluate,
        regularity=Regularity.HOLDER,
        # u = g outside the ball, so the envelope of g holds beyond both radii
        tail=TailEnvelope(g.tail.amplitude, g.tail.power, max(g.tail.radius, ball.radius)),
        supports=supports,
        interfaces=tuple(g.interfaces) + (ball,),
        length_scale=min(g.length_scale, ball.radius / 2.0),
        radial=g.radial,
        cache=cache_for(f"{field_id}|n={params.n}|s={_fmt(params.s)}|{quad.spec_key(spec)}"),
        metadata={"ball": ball, "g": g},
    )


# ---- Combinators ----

def _pole_metadata(u: ScalarField) -> Dict[str, float]:
    return {k: v for k, v in u.metadata.items() if k == "pole_exponent"}


def _scale_oracles(oracles: Dict[str, Callable], factors: Dict[str, float], transform) -> Dict[str, Callable]:
    out = {}
    for name, fn in oracles.items():
        if name in factors:
            out[name] = (lambda fn, c: lambda p, params=None: c * np.asarray(fn(transform(p), params)))(fn, factors[name])
    return out


def scaled_field(u: ScalarField, lam: float, s: float) -> ScalarField:
    """u_λ(x) = λ^(-s) u(λx)."""
    if not lam > 0:
        raise ParameterError("scaling factor must be positive", module="fields", context={"lam": lam})
    n = u.dim
    tail = u.tail
    if tail.compact:
        new_tail = TailEnvelope(lam ** -s * tail.amplitude, math.inf, tail.radius / lam)
    else:
        new_tail = TailEnvelope(lam ** (-s - tail.power) * tail.amplitude, tail.power, tail.radius / lam)

    def shrink(ball: Ball) -> Ball:
        return Ball(tuple(c / lam for c in ball.center), ball.radius / lam)

    factors = {
        "grad": lam ** (1.0 - s), "hess": lam ** (2.0 - s), "frac_laplacian": lam ** s,
        "G": 1.0, "frac_gradient": 1.0,
    }
    oracles = _scale_oracles(u.oracles, factors, lambda p: lam * as_points(p, n))
    if "gagliardo" in u.oracles:
        oracles["gagliardo"] = lambda params: lam ** (-n) * u.oracles["gagliardo"](params)
    return ScalarField(
        field_id=f"scaled:lam={_fmt(lam)};{u.field_id}",
        dim=n,
        evaluator=lambda points: lam ** (-s) * u(lam * points),
        regularity=u.regularity,
        tail=new_tail,
        supports=tuple(shrink(b) for b in u.supports),
        interfaces=tuple(shrink(b) for b in u.interfaces),
        singular_points=tuple(tuple(c / lam for c in p) for p in u.singular_points),
        length_scale=u.length_scale / lam,
        min_scale=u.min_scale / lam,
        radial=u.radial,
        oracles=oracles,
        metadata=_pole_metadata(u),
    )


def shifted_field(u: ScalarField, shift: Sequence[float]) -> ScalarField:
    """x -> u(x - a)."""
    a = np.asarray(shift, dtype=float).reshape(-1)
    if a.size != u.dim:
        raise ParameterError("shift dimension mismatch", module="fields", context={"shift": a, "dim": u.dim})
    norm = float(np.linalg.norm(a))
    tail = u.tail
    if tail.compact:
        new_tail = TailEnvelope(tail.amplitude, math.inf, tail.radius + norm)
    else:
        # |y| >= 2 max(R0, |a|) implies |y - a| >= max(R0, |y|/2)
        new_tail = TailEnvelope(tail.amplitude * 2.0 ** abs(tail.power), tail.power,
                                2.0 * max(tail.radius, norm))

    def move(ball: Ball) -> Ball:
        return Ball(tuple(np.asarray(ball.center) + a), ball.radius)

    names = ("grad", "hess", "frac_laplacian", "G", "frac_gradient")
    oracles = _scale_oracles(u.oracles, {k: 1.0 for k in names}, lambda p: as_points(p, u.dim) - a)
    if "gagliardo" in u.oracles:
        oracles["gagliardo"] = u.oracles["gagliardo"]
    return ScalarField(
        field_id=f"shifted:a={','.join(_fmt(v) for v in a)};{u.field_id}",
        dim=u.dim,
        evaluator=lambda points: u(points - a),
        regularity=u.regularity,
        tail=new_tail,
        supports=tuple(move(b) for b in u.supports),
        interfaces=tuple(move(b) for b in u.interfaces),
        singular_points=tuple(tuple(np.asarray(p) + a) for p in u.singular_points),
        length_scale=u.length_scale,
        min_scale=u.min_scale,
        oracles=oracles,
        metadata=_pole_metadata(u),
    )


def times_field(u: ScalarField, c: float) -> ScalarField:
    """x -> c u(x)."""
    names = ("grad", "hess", "frac_laplacian", "frac_gradient")
    oracles = _scale_oracles(u.oracles, {k: c for k in names}, lambda p: p)
    oracles.update(_scale_oracles(u.oracles, {"G": c * c}, lambda p: p))
    if "gagliardo" in u.oracles:
        oracles["gagliardo"] = lambda params: c * c * u.oracles["gagliardo"](params)
    return ScalarField(
        field_id=f"times:c={_fmt(c)};{u.field_id}",
        dim=u.dim,
        evaluator=lambda points: c * u(points),
        regularity=u.regularity,
        tail=TailEnvelope(abs(c) * u.tail.amplitude, u.tail.power, u.tail.radius),
        supports=u.supports,
        interfaces=u.interfaces,
        singular_points=u.singular_points,
        length_scale=u.length_scale,
        min_scale=u.min_scale,
        radial=u.radial,
        oracles=oracles,
        metadata=_pole_metadata(u),
    )


def square_field(u: ScalarField) -> ScalarField:
    """x -> u(x)^2."""
    if u.singular:
        raise FieldError("square of a field with poles is not supported", context={"field": u.field_id})
    tail = u.tail
    power = math.inf if tail.compact else 2.0 * tail.power
    return ScalarField(
        field_id=f"square:{u.field_id}",
        dim=u.dim,
        evaluator=lambda points: np.asarray(u(points), dtype=float) ** 2,
        regularity=u.regularity,
        tail=TailEnvelope(tail.amplitude ** 2, power, tail.radius),
        supports=u.supports,
        interfaces=u.interfaces,
        length_scale=u.length_scale / math.sqrt(2.0),
        min_scale=u.min_scale,
        radial=u.radial,
    )


def difference_field(u: ScalarField, z: np.ndarray) -> ScalarField:
    """w_z(y) = u(y) - u(y - z), the first difference of u in direction z."""
    z = np.asarray(z, dtype=float)
    moved = shifted_field(u, z)
    tail = moved.tail
    if not u.tail.compact:
        tail = TailEnvelope(u.tail.amplitude + tail.amplitude, u.tail.power, max(u.tail.radius, tail.radius))
    return ScalarField(
        field_id=f"diff:z={','.join(_fmt(v) for v in z)};{u.field_id}",
        dim=u.dim,
        evaluator=lambda points: u(points) - moved(points),
        regularity=u.regularity,
        tail=tail,
        supports=tuple(u.supports) + tuple(moved.supports) if u.compact else (),
        interfaces=tuple(u.interfaces) + tuple(moved.interfaces),
        singular_points=tuple(u.singular_points) + tuple(moved.singular_points),
        length_scale=u.length_scale,
        min_scale=u.min_scale,
    )


# ---- Id parser ----

def _parse_args(text: str) -> Dict[str, str]:
    args = {}
    for part in filter(None, text.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise FieldError(f"malformed field argument '{part}'")
        args[key.strip()] = value.strip()
    return args


def _number(args: Dict[str, str], key: str, field_id: str) -> float:
    try:
        return float(args[key])
    except (KeyError, ValueError):
        raise FieldError(f"field '{field_id}' needs a numeric '{key}'", context={"field": field_id}) from None


def build_field(field_id: str, params: FracParams, spec: Optional[QuadratureSpec] = None) -> ScalarField:
    """Build a catalog field from its string id."""
    field_id = field_id.strip()
    name, _, rest = field_id.partition(":")
    n = params.n
    try:
        if name == "gaussian":
            return gaussian_field(n, _number(_parse_args(rest), "w", field_id))
        if name == "bump":
            return bump_field(n, _number(_parse_args(rest), "r", field_id))
        if name == "xbump":
            return xbump_field(n, _number(_parse_args(rest), "r", field_id))
        if name == "constant":
            return constant_field(n, _number(_parse_args(rest), "c", field_id))
        if name == "phi_s":
            return fundamental_solution_field(params)
        if name == "square":
            return square_field(build_field(rest, params, spec))
        head, sep, inner = rest.partition(";")
        if not sep:
            raise FieldError(f"unknown field id '{field_id}'", context={"field": field_id})
        if name == "poisson":
            radius = _number(_parse_args(head), "r", field_id)
            key, eq, g_id = inner.partition("=")
            if key.strip() != "g" or not eq:
                raise FieldError("poisson field needs 'g=<field id>'", context={"field": field_id})
            g = build_field(g_id, params, spec)
            return poisson_harmonic_field(params, Ball.centered(n, radius), g, spec)
        if name == "scaled":
            return scaled_field(build_field(inner, params, spec), _number(_parse_args(head), "lam", field_id), params.s)
        if name == "times":
            return times_field(build_field(inner, params, spec), _number(_parse_args(head), "c", field_id))
        if name == "shifted":
            text = head.partition("=")
            if text[0].strip() != "a" or not text[1]:
                raise FieldError("shifted field needs 'a=<components>'", context={"field": field_id})
            shift = [float(v) for v in text[2].split(",")]
            return shifted_field(build_field(inner, params, spec), shift)
    except ValueError as exc:
        raise FieldError(f"malformed field id '{field_id}': {exc}", context={"field": field_id}) from exc
    raise FieldError(f"unknown field id '{field_id}'", context={"field": field_id})


ENVELOPE_SLACK = 1.01


def verify_envelope(u: ScalarField, samples: int = 1000, seed: int = 0) -> float:
    """Largest sampled ratio |u(y)| / (1.01 A |y|^(-p)) on R0 <= |y| <= 10 R0.

    Values <= 1 mean the declared envelope holds on the samples; for compact
    fields any nonzero value beyond the support gives inf.
    """
    rng = np.random.default_rng(seed)
    n, tail = u.dim, u.tail
    directions = rng.standard_normal((samples, n))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    radii = tail.radius * (1.0 + 1e-9 + 9.0 * rng.random(samples))
    values = np.abs(np.atleast_1d(u(radii[:, None] * directions)))
    if tail.compact:
        return math.inf if np.any(values > 0) else 0.0
    bound = ENVELOPE_SLACK * tail.amplitude * radii ** (-tail.power)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, values / bound, np.where(values > 0, np.inf, 0.0))
    return float(ratio.max())


__all__ = [
    "build_field", "bump_field", "constant_field", "difference_field",
    "fundamental_solution_field", "gaussian_field", "gaussian_fourier_laplacian",
    "poisson_harmonic_field", "scaled_field", "shifted_field", "square_field", "times_field",
    "verify_envelope", "xbump_field",
]
