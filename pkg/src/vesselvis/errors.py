"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for every error this package raises deliberately."""


class EmptyStack(PipelineError):
    """Frame stack holds fewer than two frames."""


class MismatchedFrameSize(PipelineError):
    """Frames in a stack do not all share the same width and height."""


class BadMagic(PipelineError):
    """File does not start with the VVOL magic bytes."""


class TruncatedPayload(PipelineError):
    """VVOL payload is shorter than the header-declared sample count."""


class UnsupportedDtype(PipelineError):
    """VVOL header declares a sample type this reader does not handle."""


class DimsMismatch(PipelineError):
    """Two grids that must share dimensions do not."""


class VolumeTooSmall(PipelineError):
    """Volume is too small for the requested operator's support."""


class UnstableTimestep(PipelineError):
    """Diffusion time step violates the explicit-scheme stability bound."""


class AllZeroWeights(PipelineError):
    """Weight normalization received a list with no positive entry."""


class NegativeGain(PipelineError):
    """Opacity gain must be nonnegative."""


class BadGeometry(PipelineError):
    """Phantom geometry parameters are out of range."""
