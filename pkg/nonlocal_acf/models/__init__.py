# Data models package
from nonlocal_acf.models.base import Base
from nonlocal_acf.models.cache_entry import CacheEntry
from nonlocal_acf.models.fields import Ball, ScalarField, TailEnvelope, VectorField
from nonlocal_acf.models.params import FracParams
from nonlocal_acf.models.quadrature import QuadratureResult, QuadratureSpec, RadialIntegrand
from nonlocal_acf.models.results import (
    BochnerResidual, ConvergenceReport, FunctionalCurve, OperatorValue, PreconditionReport,
)

__all__ = [
    "Base", "CacheEntry", "Ball", "ScalarField", "TailEnvelope", "VectorField", "FracParams",
    "QuadratureResult", "QuadratureSpec", "RadialIntegrand", "BochnerResidual",
    "ConvergenceReport", "FunctionalCurve", "OperatorValue", "PreconditionReport",
]
