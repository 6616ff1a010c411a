"""Exception hierarchy shared by all futurescene modules."""


class FuturesceneError(Exception):
    """Base class for every error raised by this package."""


# --- geometry ---

class PointBehindCameraError(FuturesceneError):
    """A 3D point has non-positive depth in the camera frame."""


class PointAtInfinityError(FuturesceneError):
    """Homogeneous mapping produced a near-zero w component."""


class DegenerateHomographyError(FuturesceneError):
    """Homography cannot be decomposed (normalization scale vanished)."""


# --- pose solving ---

class InsufficientCorrespondencesError(FuturesceneError):
    """Fewer than the minimum usable 2D-3D correspondences."""


class DegenerateConfigurationError(FuturesceneError):
    """The 3D points are collinear; pose is unobservable."""


class DivergenceError(FuturesceneError):
    """The solver produced a non-finite residual from every start."""


# --- trajectories ---

class HorizonExceedsTrajectoryError(FuturesceneError):
    """Requested planning horizon extends past the trajectory data."""


# --- CAD / rendering ---

class MalformedMeshError(FuturesceneError):
    """Mesh text could not be parsed or references invalid indices."""


class EmptyMeshError(FuturesceneError):
    """Mesh contains no faces."""


class MissingKeypointError(FuturesceneError):
    """A required named 3D keypoint is absent from the annotation."""


class NoValidFaceError(FuturesceneError):
    """Appearance baking found no usable face."""


# --- background / compositing ---

class EmptyInputError(FuturesceneError):
    """An operation that needs at least one sample got none."""


# --- metrics ---

class DimensionMismatchError(FuturesceneError):
    """Paired images or feature sets have different shapes."""


class NonPsdCovarianceError(FuturesceneError):
    """A covariance matrix has a significantly negative eigenvalue."""


class InvalidDistributionError(FuturesceneError):
    """Probability rows are negative or do not sum to one."""


class MissingHorizonError(FuturesceneError):
    """Evaluation requested a horizon with no aligned data."""


# --- scene bundle I/O ---

class MissingFileError(FuturesceneError):
    """A file referenced by a bundle manifest does not exist."""


class BundleParseError(FuturesceneError):
    """A bundle file failed to parse; message carries the line number."""


class CrossReferenceError(FuturesceneError):
    """A bundle row references an id or frame that does not exist."""
