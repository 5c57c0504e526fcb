"""Exception hierarchy for egoflow."""


class EgoflowError(Exception):
    """Base class for all egoflow errors."""


class DegeneratePointError(EgoflowError):
    """Image point lies at or near the focus of expansion for the given translation."""


class SingularSystemError(EgoflowError):
    """A linear system required by the solver is singular or too ill-conditioned."""


class NearSingularCostError(EgoflowError):
    """The closed-form cost denominator is too close to zero at this translation."""


class EstimationError(EgoflowError):
    """End-to-end estimation failed."""


class ZeroMotionError(EstimationError):
    """Flow field is too small to support a motion estimate (near-stationary camera)."""


class FlowFileError(EgoflowError):
    """A flow/intrinsics/config file could not be parsed."""


class MalformedHeaderError(FlowFileError):
    """The flow file header line is missing or malformed."""


class CountMismatchError(FlowFileError):
    """The number of data rows does not match the count declared in the header."""


class NonFiniteValueError(FlowFileError):
    """A data row contains a NaN or infinite value."""
