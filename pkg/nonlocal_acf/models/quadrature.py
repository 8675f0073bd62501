from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

DEFAULT_REL_TOL = {1: 1e-8, 2: 1e-6, 3: 1e-4}


class QuadratureSpec(BaseModel):
    """Discretization knobs of the singular-integral engine."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    panels: int = Field(40, ge=4, description="Graded panels per singular endpoint")
    grading_ratio: float = Field(0.5, gt=0.0, lt=1.0, description="Geometric ratio of the graded mesh")
    nodes_per_panel: int = Field(8, ge=4, description="Gauss-Legendre order per panel")
    angular_nodes: int = Field(64, ge=4, description="Circle nodes (n=2); n=3 uses (angular/4) x (angular/2)")
    tail_tol: float = Field(1e-10, gt=0.0, description="Bound on truncated tail integrals")
    target_rel_tol: Optional[float] = Field(None, gt=0.0, description="Target relative tolerance (per-dimension default)")
    split_radius: float = Field(1.0, gt=0.0, description="Near/far split of the difference variable")
    far_panels: int = Field(16, ge=2, description="Minimum panel count on far-field segments")
    resolution: float = Field(0.25, gt=0.0, description="Largest panel width relative to the field's length scale")
    derived_min_scale: float = Field(1e-3, gt=0.0, description="Innermost graded scale for derived fields, relative to length scale")
    outer_nodes: int = Field(24, ge=4, description="Nodes of the outer radius integral of the ACF functionals")
    allow_high_cost: bool = Field(False, description="Permit nested Bochner quadrature for n >= 2")

    @field_validator("angular_nodes")
    def even_angular_nodes(cls, v: int):
        if v % 4:
            raise ValueError("angular_nodes must be a multiple of 4 (symmetric rules)")
        return v

    def tolerance(self, n: int) -> float:
        """Target relative tolerance for dimension n."""
        return self.target_rel_tol if self.target_rel_tol is not None else DEFAULT_REL_TOL[n]

    def coarse(self) -> "QuadratureSpec":
        """Half-resolution companion used for error estimates."""
        return self.model_copy(update={
            "nodes_per_panel": max(2, self.nodes_per_panel // 2),
            "outer_nodes": max(4, (2 * self.outer_nodes) // 3),
        })

    def doubled(self) -> "QuadratureSpec":
        """Resolution-doubled companion used for convergence self-checks."""
        return self.model_copy(update={
            "panels": 2 * self.panels,
            "nodes_per_panel": 2 * self.nodes_per_panel,
            "angular_nodes": 2 * self.angular_nodes,
            "far_panels": 2 * self.far_panels,
            "resolution": self.resolution / 2,
            "outer_nodes": 2 * self.outer_nodes,
        })


@dataclass(frozen=True)
class RadialIntegrand:
    """Integrand in polar form, f(ρ, θ), behaving like |ρ - ρ*|^β near ρ*.

    The evaluator receives a radius vector and one direction and returns the
    full radial integrand (Jacobian included).
    """
    beta: float
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dim: int
    singular_radius: float = 0.0


@dataclass
class QuadratureResult:
    value: float
    error_estimate: float
    evaluations: int = 0
    truncation_radius: float = 0.0
