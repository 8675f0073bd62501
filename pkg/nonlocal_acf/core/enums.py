from enum import Enum


class ClaimId(str, Enum):
    """Experiment identifiers accepted by the runner."""
    MONOTONICITY_G = "monotonicity-G"
    MONOTONICITY_GRAD = "monotonicity-grad"
    MONOTONICITY_GRAD_F = "monotonicity-grad-f"
    STABILITY_G = "stability-G"
    STABILITY_GRAD = "stability-grad"
    SCALING = "scaling"
    BOUND = "bound"
    GRADEST = "gradest"
    BOCHNER_G = "bochner-G"
    BOCHNER_GRAD = "bochner-grad"
    LIMITS = "limits"
    MOMENTS = "moments"
    GREENS = "greens"
    MEANVALUE = "meanvalue"
    CONSTANTS = "constants"


class Outcome(str, Enum):
    """Outcome of one experiment, mapped onto the exit status."""
    PASS = "pass"
    FAIL = "fail"
    HYPOTHESIS_NOT_MET = "hypothesis-not-met"

    @property
    def exit_code(self) -> int:
        return {Outcome.PASS: 0, Outcome.FAIL: 1, Outcome.HYPOTHESIS_NOT_MET: 2}[self]


class Regularity(str, Enum):
    """Declared regularity class of a field (trusted metadata)."""
    SMOOTH_COMPACT = "C-infinity-compact"
    HOLDER = "Holder-s+eps"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"


class FunctionalKind(str, Enum):
    """Energy density entering the ACF functional."""
    G = "G"
    GRAD = "grad"


class OperatorName(str, Enum):
    """Operators reachable from the `eval` subcommand."""
    FRAC_LAPLACIAN = "frac_laplacian"
    ENERGY_DENSITY = "energy_density_G"
    FRAC_GRADIENT = "frac_gradient"
    FRAC_DIVERGENCE = "frac_divergence"
    S_MEAN = "s_mean"
    NONLOCAL_NORMAL = "nonlocal_normal"
    J_ACF = "j_acf"
    J_ACF_KELVIN = "j_acf_kelvin"
    J_ACF_GRAD = "j_acf_grad"
    J_ACF_LOCAL = "j_acf_local"
