from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np


@dataclass
class OperatorValue:
    """Pointwise value of an operator or functional with its error estimate."""
    value: Union[float, np.ndarray]
    abs_error_estimate: float
    truncation_radius_used: float = 0.0

    def __post_init__(self):
        if self.abs_error_estimate < 0:
            self.abs_error_estimate = abs(self.abs_error_estimate)

    @property
    def scalar(self) -> float:
        return float(np.asarray(self.value).reshape(-1)[0]) if np.ndim(self.value) else float(self.value)

    def to_dict(self) -> Dict[str, Any]:
        value = self.value.tolist() if isinstance(self.value, np.ndarray) else float(self.value)
        return {
            "value": value,
            "error_estimate": float(self.abs_error_estimate),
            "truncation_radius": float(self.truncation_radius_used),
        }


@dataclass
class PreconditionReport:
    """Sampled sign condition required by a monotonicity statement."""
    description: str
    points: List[List[float]]
    values: List[float]
    error_estimates: List[float]
    max_positive_excursion: float
    tolerance: float

    @property
    def satisfied(self) -> bool:
        return self.max_positive_excursion <= self.tolerance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "description": self.description,
            "points": self.points,
            "values": self.values,
            "error_estimates": self.error_estimates,
            "max_positive_excursion": self.max_positive_excursion,
            "tolerance": self.tolerance,
            "satisfied": self.satisfied,
        }


@dataclass
class FunctionalCurve:
    """Sampled map R -> J(R)."""
    radii: List[float]
    values: List[float]
    error_estimates: List[float]
    precondition_report: Optional[PreconditionReport] = None
    monotone_prefix: int = 0

    def __post_init__(self):
        if any(r <= 0 for r in self.radii) or any(b <= a for a, b in zip(self.radii, self.radii[1:])):
            from nonlocal_acf.core.errors import ParameterError
            raise ParameterError("radii must be positive and strictly increasing", module="functionals")

    @property
    def monotonicity_defect(self) -> float:
        """max_i (J(R_i) - J(R_{i+1}))_+, computed from the stored values."""
        drops = [max(a - b, 0.0) for a, b in zip(self.values, self.values[1:])]
        return max(drops, default=0.0)

    @property
    def summed_error(self) -> float:
        return float(sum(self.error_estimates))


@dataclass
class BochnerResidual:
    lhs: float
    term_cross: float
    term_square: float
    combined_error: float
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.lhs - (self.term_cross - self.term_square)

    @property
    def scale(self) -> float:
        return max(abs(self.lhs), abs(self.term_cross), abs(self.term_square))

    @property
    def relative_residual(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lhs": self.lhs,
            "term_cross": self.term_cross,
            "term_square": self.term_square,
            "residual": self.residual,
            "relative_residual": self.relative_residual,
            "combined_error": self.combined_error,
            **self.details,
        }


@dataclass
class ConvergenceReport:
    """Outcome of a resolution-doubling self-check."""
    values: List[float]
    errors: List[float]
    observed_orders: List[float]
    reference: float

    @property
    def monotone(self) -> bool:
        floor = 1e-14 * max(1.0, abs(self.reference))
        return all(b <= a + floor for a, b in zip(self.errors, self.errors[1:]))

    @property
    def final_error(self) -> float:
        return self.errors[-1]
