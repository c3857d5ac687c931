"""Exception types raised by the toolkit."""


class ZKError(Exception):
    """Base class for all toolkit errors."""


class ZeroModeSingularity(ZKError):
    """A negative power of a symbol that vanishes where the field does not."""


class BlowUpSuspected(ZKError):
    """The solution amplitude exceeded the configured ceiling."""


class WindowTooShort(ZKError):
    pass


class SupportLeakage(ZKError):
    """A space-time field is not compactly supported inside its time window."""


class Inapplicable(ZKError):
    """A ratio check has a vanishing denominator."""


class ParameterRange(ZKError):
    pass


class ResolutionError(ZKError):
    pass


class EmptyShell(ZKError):
    pass


class PreconditionViolated(ZKError):
    pass


class Unresolved(ZKError):
    """Field carries energy outside the dealiased band."""


class InsufficientSpan(ZKError):
    pass


class OverflowRisk(ZKError):
    pass
