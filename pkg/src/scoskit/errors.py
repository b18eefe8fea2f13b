"""Exception types shared across the package.

Frame- and sample-level failures are usually recoverable: the pipeline
flags the affected sample invalid and keeps going.  Errors that indicate
a broken input file, configuration, or protocol are fatal to the command
that hit them and map onto the CLI exit codes (see `scoskit.cli`).
"""


class ScosError(Exception):
    """Base class for everything raised by this package."""


# -- configuration / physics ------------------------------------------------

class ConfigError(ScosError):
    """Invalid acquisition configuration (CLI exit code 3)."""


class InvalidPhysics(ScosError):
    """Speckle physics parameters out of range (CLI exit code 3)."""


class InvalidScript(ScosError):
    """Session script violates protocol constraints (CLI exit code 3)."""


# -- frame / trace level ----------------------------------------------------

class ZeroMeanFrame(ScosError):
    """Dark-corrected frame mean is not positive."""


class DimensionMismatch(ScosError):
    """Frame dimensions disagree with the acquisition configuration."""


class ContrastUnderflow(ScosError):
    """Adjusted contrast at or below the guard epsilon; 1/K^2 unusable."""


class WindowTooShort(ScosError):
    """Baseline window does not span enough data."""


class BaselineMissing(ScosError):
    """Operation requires a trace with a computed baseline."""


# -- cardiac ------------------------------------------------------------------

class NoCardiacPeak(ScosError):
    """No spectral peak above threshold inside the cardiac band."""


class SegmentationFailed(ScosError):
    """Pulse segmentation impossible over the requested span."""


class InsufficientPulses(ScosError):
    """Too few valid pulses in an analysis window."""


# -- breath-hold --------------------------------------------------------------

class AnnotationOutOfRange(ScosError):
    """Breath-hold annotation does not fit inside the trace."""


class NoResponse(ScosError):
    """Peak value below baseline; breath-hold index not meaningful."""


class FitDiverged(ScosError):
    """Exponential response fit failed to converge."""


class DegenerateResponse(ScosError):
    """Response amplitude too small to fit."""


class VolumeResponseTooSmall(ScosError):
    """BHI_V below epsilon; flow/volume ratio would blow up."""


# -- cohort statistics --------------------------------------------------------

class DegenerateSample(ScosError):
    """Sample unusable for a two-sample test (n < 2)."""


class SampleTooSmall(ScosError):
    """Not enough values for a box-plot summary."""


class EmptyBucket(ScosError):
    """A risk-score bucket has no subjects."""


# -- files / CLI ----------------------------------------------------------------

class FormatError(ScosError):
    """Malformed input file or schema violation (CLI exit code 2)."""


class InsufficientData(ScosError):
    """Not enough subjects/sessions to run a comparison (CLI exit code 4)."""
