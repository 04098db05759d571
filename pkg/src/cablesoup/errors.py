"""Exception hierarchy shared by all modules."""


class CableSoupError(Exception):
    """Base class for every error raised by the package."""


class GraphError(CableSoupError):
    pass


class ZeroLength(GraphError):
    pass


class SelfLoop(GraphError):
    pass


class NotTransient(GraphError):
    pass


class SingularSystem(CableSoupError):
    pass


class InvalidParams(CableSoupError, ValueError):
    pass


class InversionFailure(CableSoupError):
    pass


class StepTooCoarse(CableSoupError, ValueError):
    pass


class InvalidIntensity(CableSoupError, ValueError):
    pass


class TruncationTooTight(CableSoupError):
    pass


class EmptySoup(CableSoupError):
    pass


class EmptyOverlap(CableSoupError):
    pass


class OutOfDomain(CableSoupError, ValueError):
    pass


class InsufficientScales(CableSoupError):
    pass


class UsageError(CableSoupError):
    pass
