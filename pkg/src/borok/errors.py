"""Exception hierarchy shared by all borok modules."""


class BorokError(Exception):
    """Base class for every error raised by this package."""


class SingularSystem(BorokError):
    """A shifted or dense linear system has a pivot below tolerance."""


class RankDeficient(BorokError):
    """A least-squares coefficient matrix lost full row rank."""


class NonFiniteState(BorokError):
    """A state vector or right-hand side evaluation contains NaN or Inf."""


class SeriousBreakdown(BorokError):
    """Lanczos pairing failure: beta vanished while theta did not.

    The partially built basis is attached as ``basis`` so the caller can
    decide whether it is still usable.
    """

    def __init__(self, message, basis=None):
        super().__init__(message)
        self.basis = basis


class ParseError(BorokError):
    """Malformed tableau or configuration text."""


class ValidationError(BorokError):
    """Structurally valid input that violates an invariant.

    ``field`` names the offending entry.
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class StepsizeUnderflow(BorokError):
    """The step controller asked for a step below ``h_min``."""


class MaxStepsExceeded(BorokError):
    """An integration run used up its step budget before reaching tF."""


class ReferenceUnavailable(BorokError):
    """No reference solution could be loaded or generated."""


class ReferenceMismatch(ReferenceUnavailable):
    """A stored reference belongs to a different problem setup."""


class ConfigError(BorokError):
    """Invalid experiment configuration."""
