from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from nonlocal_acf.api.schemas.experiment import ExperimentConfig
from nonlocal_acf.core.enums import ClaimId, Outcome
from nonlocal_acf.core.errors import ConfigError


@dataclass
class ClaimResult:
    """What a claim handler hands back to the runner."""
    outcome: Outcome
    summary: Dict[str, Any]
    columns: List[str]
    rows: List[Dict[str, Any]]
    details: Dict[str, Any] = field(default_factory=dict)
    assumptions: List[str] = field(default_factory=list)


Handler = Callable[[ExperimentConfig], ClaimResult]


class ClaimRouter:
    """Registry of claim handlers, filled by decorating functions."""

    def __init__(self, tags: Optional[List[str]] = None):
        self.tags = list(tags or [])
        self.handlers: Dict[ClaimId, Handler] = {}

    def claim(self, claim_id: ClaimId) -> Callable[[Handler], Handler]:
        def register(fn: Handler) -> Handler:
            if claim_id in self.handlers:
                raise ConfigError(f"claim '{claim_id.value}' registered twice")
            self.handlers[claim_id] = fn
            return fn
        return register

    def include_router(self, other: "ClaimRouter"):
        for claim_id, fn in other.handlers.items():
            self.claim(claim_id)(fn)

    def resolve(self, claim_id: ClaimId) -> Handler:
        try:
            return self.handlers[claim_id]
        except KeyError:
            raise ConfigError(f"no handler for claim '{claim_id.value}'", context={"claim": claim_id.value}) from None
