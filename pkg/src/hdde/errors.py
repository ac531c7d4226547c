"""Exception hierarchy.

Input problems (bad files, malformed records, invalid parameters) derive from
:class:`InputError`; failures inside the numerics derive from
:class:`NumericalError`.  The CLI maps these to exit codes 2 and 3.
"""


class HDDEError(Exception):
    """Base class for all package errors."""


class InputError(HDDEError, ValueError):
    pass


class ParseError(InputError):
    """A record could not be parsed; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateTrackError(InputError):
    pass


class DimensionError(InputError):
    pass


class NumericalError(HDDEError, ArithmeticError):
    pass


class SingularStationaryError(NumericalError):
    pass


class IllConditionedExtensionError(NumericalError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"eigenvalue lambda_{index} = {value:.3e} is too small for a stable "
            "Nystrom extension"
        )


class ZeroBandwidthError(NumericalError):
    pass


class SamplerError(HDDEError):
    def __init__(self, replicate, cause):
        self.replicate = replicate
        super().__init__(f"sampler failed on replicate {replicate}: {cause}")


class ExtrapolationError(InputError):
    """A query point lies outside a gridded field."""


class DensityFloorError(NumericalError):
    def __init__(self, values, floor):
        self.values = tuple(float(v) for v in values)
        shown = ", ".join(f"{v:g}" for v in self.values[:10])
        more = "" if len(self.values) <= 10 else f" (+{len(self.values) - 10} more)"
        super().__init__(f"predictor density below {floor:g} at x = {shown}{more}")
