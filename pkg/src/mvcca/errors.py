"""Exception hierarchy shared across the toolkit.

Every error raised by package code derives from MvccaError so callers (and
the CLI) can map failures to exit codes by family.
"""


class MvccaError(Exception):
    """Base class for all toolkit errors."""


# --- numerics -----------------------------------------------------------

class NonFiniteError(MvccaError):
    """An input or intermediate matrix contains NaN or infinity."""


class NonSymmetricError(MvccaError):
    """A matrix required to be symmetric is not, beyond tolerance."""


class ShapeMismatchError(MvccaError):
    """Operand dimensions are incompatible."""


# --- CCA solvers --------------------------------------------------------

class DegenerateCovarianceError(MvccaError):
    """A covariance matrix is singular and no regularization was supplied."""


class CapExceededError(MvccaError):
    """A problem size exceeds the configured cap for an exact solver."""


class ZeroRegularizationError(MvccaError):
    """An operation requires strictly positive regularization."""


class RankRequestTooLargeError(MvccaError):
    """Requested approximation rank exceeds the number of samples."""


class NonPositiveWidthError(MvccaError):
    """Kernel width must be strictly positive."""


# --- neural nets and objectives -----------------------------------------

class BadSpecError(MvccaError):
    """A network layer specification is invalid."""


class StaleCacheError(MvccaError):
    """A backward pass was given a cache from a different forward pass."""


class StaleEstimateError(MvccaError):
    """A gradient was requested from an estimate built on different data."""


class MinibatchTooSmallError(MvccaError):
    """Too few samples to estimate a correlation objective."""


class TopologyMismatchError(MvccaError):
    """Networks supplied to an objective do not match its topology."""


class NonFiniteLossError(MvccaError):
    """Training produced a non-finite loss or gradient."""


# --- evaluation ---------------------------------------------------------

class TooFewSamplesError(MvccaError):
    """Fewer samples than clusters requested."""


class LengthMismatchError(MvccaError):
    """Label sequences have different lengths."""


class SingleClassError(MvccaError):
    """Classification requires at least two classes."""


# --- datasets and IO ----------------------------------------------------

class BadMagicError(MvccaError):
    """File does not start with the expected magic number."""


class TruncatedFileError(MvccaError):
    """File ended before the declared payload was read."""


class DimensionMismatchError(MvccaError):
    """Declared dimensions disagree with the payload or companion file."""


class LabelClassEmptyError(MvccaError):
    """A class label has no samples to draw a partner image from."""


class InfeasibleSpecError(MvccaError):
    """A synthetic dataset specification has no valid construction."""


class EmptyBatchError(MvccaError):
    """An estimator was asked to draw zero samples."""


class NegativeInputError(MvccaError):
    """A quantity that must be nonnegative was negative."""


class IncompatibleModelError(MvccaError):
    """A serialized model cannot be applied to the given data."""


class ConfigError(MvccaError):
    """An experiment configuration is invalid."""


# --- warnings -----------------------------------------------------------

class ClampWarning(UserWarning):
    """Eigenvalues were clamped to a floor during a PSD inverse square root."""


class SingularLandmarkKernelWarning(UserWarning):
    """The landmark kernel matrix was rank deficient; a floor was applied."""


class DisconnectedGraphWarning(UserWarning):
    """The neighborhood graph has several connected components."""
