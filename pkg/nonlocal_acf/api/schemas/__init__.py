# API schemas package
from nonlocal_acf.api.schemas.experiment import (
    ExperimentConfig,
    PointRecord, Report, VerifySummary,
)

__all__ = [
    "ExperimentConfig",
    "PointRecord", "Report", "VerifySummary",
]
