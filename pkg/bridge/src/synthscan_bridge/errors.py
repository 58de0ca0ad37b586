"""Bridge error hierarchy."""


class BridgeError(Exception):
    """Base class for everything this package raises on purpose."""


class JobFormatError(BridgeError):
    """A job file or input table is malformed."""


class CheckpointError(BridgeError):
    """An unknown or unresolvable checkpoint id."""


class ImageFormatError(BridgeError):
    """An image file cannot be decoded."""
