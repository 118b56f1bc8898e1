"""Exception types raised across the package."""


class OTLError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(OTLError, ValueError):
    pass


class ZeroRow(OTLError, ValueError):
    def __init__(self, index: int):
        super().__init__(f"row {index} has (near) zero norm")
        self.index = index


class ZeroVector(OTLError, ValueError):
    pass


class NonPositiveTemperature(OTLError, ValueError):
    pass


class TooFewSamples(OTLError, ValueError):
    pass


class TooFewIdentities(OTLError, ValueError):
    pass


class InsufficientData(OTLError, ValueError):
    pass


class EntryTooLarge(OTLError, ValueError):
    pass


class NotADistribution(OTLError, ValueError):
    pass


class NoValidQueries(OTLError, ValueError):
    pass


class LengthMismatch(OTLError, ValueError):
    pass


class DimMismatch(OTLError, ValueError):
    pass


class ParseError(OTLError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NotConverged(UserWarning):
    """Sinkhorn hit max_iter with marginal error above 1e-3.

    Emitted as a warning; the returned assignment is still usable.
    """

    def __init__(self, iters: int, marginal_err: float):
        super().__init__(f"sinkhorn not converged after {iters} iterations "
                         f"(marginal error {marginal_err:.3e})")
        self.iters = iters
        self.marginal_err = marginal_err
