"""
Exception hierarchy shared by every estimator component
"""

from typing import Optional


class SqrtVinsError(Exception):
    """Base class for all toolkit errors"""


# Numerical failures
class NumericalError(SqrtVinsError):
    """A factorization or solve could not be completed safely"""


class NotPositiveDefinite(NumericalError):
    """A Cholesky pivot fell below the precision tolerance"""


class RankDeficient(NumericalError):
    """A Jacobian lacks full column rank"""


class SingularFactor(NumericalError):
    """A triangular factor has a (near) zero diagonal entry"""


class IllConditioned(NumericalError):
    """A normal matrix is too poorly conditioned to solve"""


class Diverged(NumericalError):
    """An iterative solve increased its residual repeatedly"""


# State layout
class StateLayoutError(SqrtVinsError):
    """The requested operation does not match the state layout"""


class DimensionMismatch(StateLayoutError):
    pass


class UnknownBlock(StateLayoutError):
    pass


class UnknownClone(UnknownBlock):
    pass


# Geometry
class GeometryError(SqrtVinsError):
    """A measurement geometry cannot support the requested estimate"""


class BehindCamera(GeometryError):
    pass


class LowParallax(GeometryError):
    pass


class NegativeDepth(GeometryError):
    pass


class DegenerateGeometry(GeometryError):
    pass


# Data ingestion
class DataError(SqrtVinsError):
    """Sensor data is missing or malformed"""


class InsufficientData(DataError):
    pass


class EmptyBuffer(DataError):
    pass


class NonMonotonicTimestamps(DataError):
    pass


class MissingFile(DataError):
    pass


class UnitsAmbiguous(DataError):
    pass


class MalformedRow(DataError):
    """A CSV row failed to parse"""

    def __init__(self, message: str, line_number: Optional[int] = None, path: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        location = ""
        if path is not None:
            location += f"{path}"
        if line_number is not None:
            location += f":{line_number}"
        super().__init__(f"{location}: {message}" if location else message)
