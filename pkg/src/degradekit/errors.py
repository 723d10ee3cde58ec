"""Exception hierarchy shared across the toolkit.

Exit-code mapping used by the CLI and the HTTP error model:
validation -> 2, capability -> 3, budget/partial -> 4.
"""


class DegradekitError(Exception):
    """Base class for all toolkit errors."""

    code = "error"


class ValidationError(DegradekitError):
    """Input violates a documented precondition or invariant."""

    code = "validation"


class FormatError(ValidationError):
    """Byte stream is not the declared file format (bad magic/version)."""

    code = "format"


class CorruptionError(ValidationError):
    """File format recognized but the body is truncated or inconsistent."""

    code = "corruption"


class CapabilityError(DegradekitError):
    """Host lacks a required hardware or OS capability."""

    code = "capability"


class CalibrationAmbiguousError(DegradekitError):
    """Hit/miss latency histograms overlap with no usable gap.

    Carries both histograms so callers can inspect or re-run.
    """

    code = "calibration-ambiguous"

    def __init__(self, message, hit_hist=None, miss_hist=None):
        super().__init__(message)
        self.hit_hist = hit_hist
        self.miss_hist = miss_hist


class InsufficientSamplesError(DegradekitError):
    """Fewer accepted samples than the requested selection size."""

    code = "insufficient-samples"

    def __init__(self, message, shortfall=0):
        super().__init__(message)
        self.shortfall = shortfall


class BudgetExhaustedError(DegradekitError):
    """Query budget ran out before enough samples were collected.

    ``partial`` holds whatever was collected so far.
    """

    code = "budget"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class LatticeRankError(ValidationError):
    """Basis rows are linearly dependent."""

    code = "rank"


class OrchestrationError(DegradekitError):
    """A party in the synchronized run failed; names the party."""

    code = "orchestration"

    def __init__(self, message, party=None):
        super().__init__(message)
        self.party = party
