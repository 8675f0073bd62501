from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from nonlocal_acf.core.config import settings
from nonlocal_acf.core.enums import ClaimId, Outcome
from nonlocal_acf.models.quadrature import QuadratureSpec


def _sorted_grid(name: str, values: Optional[List[float]]) -> Optional[List[float]]:
    if values is None:
        return values
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly increasing")
    return values


# ---- Config models ----

class ExperimentConfig(BaseModel):
    """One experiment, as read from a suite TOML file."""

    model_config = ConfigDict(extra="forbid")

    claim: ClaimId
    name: Optional[str] = Field(None, description="Report basename; defaults to the claim id")
    field: Optional[str] = Field(None, description="Primary catalog field id")
    field2: Optional[str] = Field(None, description="Second field id (pairs, kernel checks)")
    n: int = Field(1, ge=1, le=3)
    s: float = Field(0.5, gt=0.0, lt=1.0)
    s_grid: Optional[List[float]] = None
    R: Optional[float] = Field(None, gt=0.0)
    R_grid: Optional[List[float]] = None
    lambdas: Optional[List[float]] = None
    points: Optional[List[List[float]]] = None
    ball_radius: float = Field(1.0, gt=0.0)
    spec: Dict[str, Any] = Field(default_factory=dict, description="QuadratureSpec overrides")
    out_dir: str = "results"
    jobs: int = Field(default_factory=lambda: settings.DEFAULT_JOBS, ge=1)
    seed: int = Field(default_factory=lambda: settings.DEFAULT_SEED)
    monte_carlo: bool = False
    mc_samples: int = Field(10 ** 6, ge=100)
    check_doubling: bool = True

    @field_validator("s_grid")
    def check_s_grid(cls, v):
        v = _sorted_grid("s_grid", v)
        if v is not None and any(not 0.0 < s < 1.0 for s in v):
            raise ValueError("s_grid entries must lie in (0, 1)")
        return v

    @field_validator("R_grid")
    def check_R_grid(cls, v):
        v = _sorted_grid("R_grid", v)
        if v is not None and v[0] <= 0:
            raise ValueError("R_grid entries must be positive")
        return v

    @field_validator("lambdas")
    def check_lambdas(cls, v):
        if v is not None and (not v or any(lam <= 0 for lam in v)):
            raise ValueError("lambdas must be a nonempty list of positive numbers")
        return v

    @model_validator(mode="after")
    def check_point_dimension(self):
        for p in self.points or []:
            if len(p) != self.n:
                raise ValueError(f"point {p} does not have dimension n={self.n}")
        return self

    @property
    def report_name(self) -> str:
        return self.name or self.claim.value

    def quadrature_spec(self) -> QuadratureSpec:
        return QuadratureSpec(**self.spec)


# ---- Report models ----

Scalar = Union[float, int, str, bool, None]


class PointRecord(BaseModel):
    """One CSV row: a radius, an s value or a point, with its error estimate."""
    values: Dict[str, Scalar]

    def row(self, columns: List[str]) -> List[Scalar]:
        return [self.values.get(c) for c in columns]


class Report(BaseModel):
    """Machine-readable outcome of one experiment."""
    schema_version: str
    library_version: str
    claim: ClaimId
    name: str
    outcome: Outcome
    summary: Dict[str, Any] = Field(default_factory=dict)
    columns: List[str] = Field(default_factory=list)
    records: List[PointRecord] = Field(default_factory=list)
    details: Dict[str, Any] = Field(default_factory=dict)
    assumptions: List[str] = Field(default_factory=list)
    wall_time: float = 0.0
    config: Dict[str, Any] = Field(default_factory=dict)
    error: Optional[Dict[str, Any]] = None

    @property
    def exit_code(self) -> int:
        return 1 if self.error else self.outcome.exit_code


class VerifySummary(BaseModel):
    """Aggregate of a verify-all run."""
    total: int = 0
    passed: List[str] = Field(default_factory=list)
    failed: List[str] = Field(default_factory=list)
    hypothesis_not_met: List[str] = Field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if self.failed else 0
