from typing import Optional

from pydantic import BaseModel, ConfigDict, Field


class FracParams(BaseModel):
    """Dimension, order and every dimensional constant derived from them."""

    model_config = ConfigDict(frozen=True)

    n: int = Field(..., ge=1, le=3, description="Space dimension")
    s: float = Field(..., gt=0.0, lt=1.0, description="Fractional order")
    c_ns: float = Field(..., gt=0.0, description="Normalization of (-Δ)^s, from its defining integral")
    c_ns_error: float = Field(0.0, ge=0.0, description="Change of c_ns under doubled quadrature")
    a_ns: float = Field(..., gt=0.0, description="Poisson-kernel normalization")
    kappa_ns: Optional[float] = Field(None, description="Fundamental-solution constant, absent when 2s = n")
    mu_ns: float = Field(..., gt=0.0, description="Fractional-gradient normalization")
    omega_n: float = Field(..., gt=0.0, description="Lebesgue measure of the unit ball")

    @property
    def surface_area(self) -> float:
        """Measure of the unit sphere, n·ω_n."""
        return self.n * self.omega_n

    @property
    def has_kappa(self) -> bool:
        return self.kappa_ns is not None
