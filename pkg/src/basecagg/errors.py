"""Exception hierarchy shared by every layer of the package."""


class BASecAggError(Exception):
    """Base class for all package errors."""


class ZeroInverse(BASecAggError, ZeroDivisionError):
    pass


class DimensionMismatch(BASecAggError, ValueError):
    pass


class DuplicateIndex(BASecAggError, ValueError):
    pass


class NonFinite(BASecAggError, ValueError):
    pass


class OutOfRange(BASecAggError, ValueError):
    """A value does not fit the signed range of the field.

    ``index`` is the offending coordinate when the value came from a vector.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ZeroWeightSum(BASecAggError, ZeroDivisionError):
    pass


class InvalidParams(BASecAggError, ValueError):
    pass


class MissingShare(BASecAggError, KeyError):
    def __init__(self, owner, round):
        super().__init__(f"no share for owner={owner} round={round}")
        self.owner = owner
        self.round = round

    def __str__(self):
        return self.args[0]


class InsufficientResponses(BASecAggError):
    def __init__(self, got, needed):
        super().__init__(f"recovery needs {needed} responses, got {got}")
        self.got = got
        self.needed = needed


class StalenessExceeded(BASecAggError, ValueError):
    pass


class ConfigError(BASecAggError, ValueError):
    pass
