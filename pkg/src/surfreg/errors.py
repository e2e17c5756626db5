"""Exception types shared across the package.

The CLI maps these onto exit codes: input/format problems -> 2,
empty or degenerate data -> 3, numerical failures -> 4.
"""


class SurfregError(Exception):
    """Base class for all package errors."""


class MeshFormatError(SurfregError):
    """A mesh file failed to parse or violated a mesh invariant."""


class RegionError(SurfregError):
    """A region selection is empty, disconnected, or otherwise unusable."""


class GeodesicError(SurfregError):
    """A distance-field or meridian computation failed."""


class BehindCameraError(SurfregError):
    """A point mapped to nonpositive camera-space depth."""


class CodecError(SurfregError):
    """An image did not conform to the coordinate-map PNG layout."""


class CorrespondenceError(SurfregError):
    """No usable 2D-3D correspondences for pose solving."""


class DegenerateConfigurationError(SurfregError):
    """The 3D points do not constrain a pose (collinear or too few)."""


class NoConsensusError(SurfregError):
    """RANSAC found no pose with enough inliers."""
