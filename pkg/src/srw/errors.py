"""Exception types shared across the toolkit."""


class SrwError(Exception):
    """Base class for all toolkit errors."""


class UnmappedPair(SrwError):
    """Plane-label pairing with no line-label mapping; signals corrupt scene topology."""


class ParseError(SrwError):
    """Malformed or schema-violating input file."""


class TopologyError(SrwError):
    """Plane lines do not chain into valid closed polygons."""


class InvalidRotation(SrwError):
    """Matrix is not a proper rotation (orthonormal, determinant +1)."""


class DimensionMismatch(SrwError):
    """Semantic mask dimensions disagree with the paired camera view."""


class PointAtInfinity(SrwError):
    """Homogeneous point with a vanishing last coordinate."""


class Degenerate(SrwError):
    """Point set does not determine a unique plane."""


class BehindCamera(SrwError):
    """Point has non-positive depth in the camera frame."""


class EmptyInput(SrwError):
    """Operation requires at least one element."""


class DegeneratePolygon(SrwError):
    """Polygon area is too small to sample."""
