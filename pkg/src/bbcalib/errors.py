"""Exception types raised across the package."""


class CalibrationError(Exception):
    """Base class for all bbcalib errors."""


class NearInfinityPoint(CalibrationError, ArithmeticError):
    """Homogeneous coordinate too close to zero to dehomogenize."""


class RankDeficient(CalibrationError, ValueError):
    """A projection matrix lost rank after correction."""


class TooFewPoints(CalibrationError, ValueError):
    pass


class DegenerateConfiguration(CalibrationError, ValueError):
    """Point set is collinear/coplanar for the requested model."""


class DegenerateMotion(CalibrationError, ValueError):
    """Pivot poses do not excite enough rotation axes."""


class NoConsensus(CalibrationError):
    """RANSAC could not reach the required inlier fraction."""


class AmbiguousAverage(CalibrationError, ValueError):
    """Quaternion average undefined (top eigenvalues coincide)."""


class PacketError(CalibrationError, ValueError):
    pass


class BadMagic(PacketError):
    pass


class BadLength(PacketError):
    pass


class NonUnitQuaternion(PacketError):
    pass
