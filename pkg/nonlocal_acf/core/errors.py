"""
Exception hierarchy.

Every error carries the module it originated from so the runner can report
provenance ("[quadrature] ...", "[functionals] ...") in its error JSON.
"""
from typing import Any, Dict, Optional


class NonlocalACFError(Exception):
    """Base class for all library errors."""

    default_module = "core"

    def __init__(self, message: str, module: Optional[str] = None, context: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.module = module or self.default_module
        self.context = dict(context or {})

    def with_context(self, **extra: Any) -> "NonlocalACFError":
        """Return a copy of this error with additional context entries."""
        merged = {**self.context, **extra}
        return type(self)(self.message, module=self.module, context=merged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "module": self.module,
            "message": self.message,
            "context": {k: _plain(v) for k, v in self.context.items()},
        }

    def __str__(self) -> str:
        text = f"[{self.module}] {self.message}"
        if self.context:
            details = ", ".join(f"{k}={_plain(v)}" for k, v in self.context.items())
            text += f" ({details})"
        return text


class ParameterError(NonlocalACFError):
    """Invalid dimension, order, radius or grid."""
    default_module = "constants"


class NonIntegrableError(NonlocalACFError):
    """Kernel exponent or tail combination that is not integrable."""
    default_module = "quadrature"


class EvaluationError(NonlocalACFError):
    """NaN/inf from an evaluator, or evaluation at a singular point."""
    default_module = "operators"


class FieldError(NonlocalACFError):
    """Unknown field id, missing envelope or oracle."""
    default_module = "fields"


class CostGuardError(NonlocalACFError):
    """Refused evaluation that would be prohibitively expensive."""
    default_module = "bochner"


class ConfigError(NonlocalACFError):
    """Invalid experiment config or manifest."""
    default_module = "cli"


def _plain(value: Any) -> Any:
    if hasattr(value, "tolist"):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    return value
