"""Exception hierarchy shared by every module."""


class ABCIError(ValueError):
    """Base class for data and method errors raised by abci."""


class ConflictingGroup(ABCIError):
    pass


class NegativeMetric(ABCIError):
    pass


class InsufficientUsers(ABCIError):
    pass


class DegenerateMeans(ABCIError):
    pass


class OutOfDomain(ABCIError):
    pass


class InvalidReplicateCount(ABCIError):
    pass


class EmptyDistribution(ABCIError):
    pass


class InsufficientReplicates(ABCIError):
    pass


class UnsupportedCombination(ABCIError):
    pass
