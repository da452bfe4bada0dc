"""Exception types raised across the package."""


class KeytrackError(Exception):
    """Base class for all keytrack errors."""


class InvalidGeometry(KeytrackError):
    """Marker geometry violates its constraints (radii, contrast)."""


class GridOutOfBounds(KeytrackError):
    """A generated marker center lies outside the sensor pixel bounds."""


class LayoutInvalid(KeytrackError):
    """A layout failed validation against a tracker configuration."""


class DimensionMismatch(KeytrackError):
    """Image planes or buffers disagree in size."""


class ScenarioInvalid(KeytrackError):
    """A simulation scenario violates its declared bounds."""


class StreamFormatError(KeytrackError):
    """An input file or stream does not match its documented layout."""
