"""Exception types raised by the dpalloc library.

Every error below derives from DpAllocError so callers (and the CLI) can
distinguish library failures from programming errors. InputError groups
problems with user-supplied data or parameters; DegenerateConfiguration
groups runs whose privacy/repair configuration cannot produce a result.
"""


class DpAllocError(Exception):
    """Base class for all dpalloc errors."""


class InputError(DpAllocError):
    """Bad user input: malformed data, invalid parameter, schema violation."""


class DegenerateConfiguration(DpAllocError):
    """Configuration admits no meaningful result (e.g. slack exceeds totals)."""


# data model / validation

class MissingQuery(InputError):
    pass


class NonFiniteValue(InputError):
    pass


class NegativeTrueCount(InputError):
    pass


class ShapeMismatch(InputError):
    pass


# mechanisms

class NonPositiveScale(InputError):
    pass


class NonPositiveEpsilon(InputError):
    pass


class OrderingViolation(InputError):
    pass


class EmptyInput(InputError):
    pass


class DomainError(InputError):
    pass


# allocators / metrics

class NonFiniteInput(InputError):
    pass


class LengthMismatch(InputError):
    pass


class LengthZero(InputError):
    pass


class ZeroTotalPopulation(InputError):
    pass


class ZeroQuota(InputError):
    pass


# repair

class SamplingExhausted(DpAllocError):
    """Rejection sampler hit its draw cap before collecting enough samples."""


class NonPositiveDenominator(DegenerateConfiguration):
    """Deflated allocation denominator is not positive at this configuration."""


# file I/O

class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaMismatch(InputError):
    pass


class DuplicateAssignee(InputError):
    pass


class IoError(InputError):
    pass
