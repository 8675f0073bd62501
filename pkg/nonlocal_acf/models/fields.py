from dataclasses import dataclass, field
import math
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from nonlocal_acf.core.cache import PointCache
from nonlocal_acf.core.enums import Regularity
from nonlocal_acf.core.errors import EvaluationError, FieldError, ParameterError


def as_points(points, dim: int) -> np.ndarray:
    """Coerce a scalar, a point or a stack of points into an (m, dim) array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, dim) if dim == 1 and arr.size != 1 else arr.reshape(1, -1)
    if arr.shape[-1] != dim:
        raise ParameterError(f"expected points in R^{dim}, got shape {arr.shape}", module="fields")
    return arr


@dataclass(frozen=True)
class TailEnvelope:
    """|u(y)| <= amplitude * |y|^(-power) for |y| >= radius; power = inf means support in B_radius."""
    amplitude: float
    power: float
    radius: float

    @property
    def compact(self) -> bool:
        return math.isinf(self.power)

    def bound(self, r):
        r = np.asarray(r, dtype=float)
        if self.compact:
            return np.where(r > self.radius, 0.0, np.inf)
        return self.amplitude * r ** (-self.power)


@dataclass(frozen=True)
class Ball:
    center: Tuple[float, ...]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("ball radius must be positive", module="fields", context={"radius": self.radius})
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @classmethod
    def centered(cls, dim: int, radius: float) -> "Ball":
        return cls((0.0,) * dim, radius)

    @property
    def dim(self) -> int:
        return len(self.center)

    def distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the sphere (negative inside)."""
        return np.linalg.norm(np.atleast_2d(points) - np.asarray(self.center), axis=-1) - self.radius

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.distance(points) < 0


@dataclass(eq=False)
class ScalarField:
    """An evaluable map R^dim -> R with decay and regularity metadata.

    `supports` lists balls whose union contains the support (empty when the
    field is not compactly supported); `interfaces` lists spheres across which
    the field is only Hölder; `singular_points` are poles where evaluation is
    refused. Quadrature uses all three as breakpoints.
    """
    field_id: str
    dim: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    regularity: Regularity
    tail: TailEnvelope
    supports: Tuple[Ball, ...] = ()
    interfaces: Tuple[Ball, ...] = ()
    singular_points: Tuple[Tuple[float, ...], ...] = ()
    length_scale: float = 1.0
    min_scale: float = 0.0
    radial: bool = False
    oracles: Dict[str, Callable] = field(default_factory=dict)
    cache: Optional[PointCache] = None
    derived: bool = False
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def compact(self) -> bool:
        return bool(self.supports)

    @property
    def singular(self) -> bool:
        return bool(self.singular_points)

    @property
    def extent(self) -> float:
        """Radius of a centered ball containing every support ball."""
        if not self.supports:
            return math.inf
        return max(np.linalg.norm(b.center) + b.radius for b in self.supports)

    def __call__(self, points):
        pts = as_points(points, self.dim)
        single = np.ndim(points) <= 1 and pts.shape[0] == 1
        for pole in self.singular_points:
            if np.any(np.linalg.norm(pts - np.asarray(pole), axis=-1) < 1e-14):
                raise EvaluationError(
                    f"{self.field_id} evaluated at its singular point",
                    module="fields", context={"point": pole},
                )
        if self.cache is not None:
            values = self.cache.get_many(pts, self.evaluator)
        else:
            values = np.asarray(self.evaluator(pts), dtype=float).reshape(-1)
        if not np.all(np.isfinite(values)):
            raise EvaluationError(
                f"non-finite value from {self.field_id}", module="fields",
                context={"point": pts[~np.isfinite(values)][0]},
            )
        return float(values[0]) if single else values

    def has_oracle(self, name: str) -> bool:
        return name in self.oracles

    def oracle(self, name: str) -> Callable:
        try:
            return self.oracles[name]
        except KeyError:
            raise FieldError(f"{self.field_id} has no '{name}' oracle", context={"field": self.field_id}) from None


@dataclass(eq=False)
class VectorField:
    """An evaluable map R^dim -> R^dim, assembled from scalar components."""
    field_id: str
    components: Sequence[ScalarField]

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def supports(self) -> Tuple[Ball, ...]:
        if all(c.supports for c in self.components):
            return tuple(b for c in self.components for b in c.supports)
        return ()

    @property
    def tail(self) -> TailEnvelope:
        tails = [c.tail for c in self.components]
        return TailEnvelope(
            amplitude=math.sqrt(self.dim) * max(t.amplitude for t in tails),
            power=min(t.power for t in tails),
            radius=max(t.radius for t in tails),
        )

    @property
    def length_scale(self) -> float:
        return min(c.length_scale for c in self.components)

    @property
    def min_scale(self) -> float:
        return max(c.min_scale for c in self.components)

    def __call__(self, points) -> np.ndarray:
        pts = as_points(points, self.dim)
        values = np.stack([np.atleast_1d(c(pts)) for c in self.components], axis=-1)
        return values[0] if np.ndim(points) <= 1 and pts.shape[0] == 1 else values
