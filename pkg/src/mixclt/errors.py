"""Exception hierarchy for mixclt.

Every library error derives from MixCltError so callers (and the CLI) can
separate mathematical/input failures from genuine bugs.
"""


class MixCltError(Exception):
    """Base class for all mixclt errors."""


# --- chain model -----------------------------------------------------------

class DimensionMismatch(MixCltError):
    """Chain spec arrays have inconsistent shapes."""


class NotStochastic(MixCltError):
    """A transition row or the initial law is not a probability vector."""


class NotCentered(MixCltError):
    """Observation functions have nonzero mean and centering was not requested."""


class IndexOutOfRange(MixCltError):
    """A (step, lag) pair does not fit inside the row."""


class StateSpaceTooLarge(MixCltError):
    """Path enumeration was requested beyond the configured cap."""


class SpecFileError(MixCltError):
    """A chain-spec JSON file is malformed. Carries path, field and reason."""

    def __init__(self, path, field, reason):
        self.path = str(path)
        self.field = field
        self.reason = reason
        super().__init__(f"{self.path}: field {field!r}: {reason}")


# --- coefficients ----------------------------------------------------------

class DegenerateJoint(MixCltError):
    """The alleged joint law is not a probability matrix."""


# --- moments ---------------------------------------------------------------

class InvalidOrder(MixCltError):
    """A moment order below 2 was requested."""


class DegenerateMixing(MixCltError):
    """An operation requires 0 < lambda < 1 and the chain sits at an endpoint."""


class DegenerateContraction(MixCltError):
    """An operation requires delta_1 < 1."""


class InvalidT(MixCltError):
    """Exponential-moment bound requested beyond its admissible range of t."""


# --- families --------------------------------------------------------------

class InvalidRate(MixCltError):
    """A flip-rate value or rate expression is outside its admissible range."""


class InvalidPhi(MixCltError):
    """AR(1) coefficient outside (-1, 1)."""


class RejectionBudgetExceeded(MixCltError):
    """Random-family rejection sampling did not meet the mixing floor in budget."""


# --- experiments -----------------------------------------------------------

class ZeroVariance(MixCltError):
    """Normalization by sigma_n requested but the partial sum has zero variance."""


class EmptySample(MixCltError):
    """A distribution distance was requested for an empty sample."""
