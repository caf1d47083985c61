"""Exception types shared across the package."""


class MdaecError(Exception):
    """Base class for all package errors."""


class ConfigError(MdaecError):
    """Invalid configuration value or combination."""


class FrameGapError(MdaecError):
    """Non-contiguous frame indices passed to a streaming consumer."""


class InvalidFrameError(MdaecError):
    """NaN/Inf input frame; the consumer's state is left untouched."""
