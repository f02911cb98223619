"""Error taxonomy for the bridge.

Deliberately parallel to the audit toolkit's taxonomy (same ``code`` strings,
same CLI exit mapping) but defined here so the bridge has no import-time
dependency on it: the two packages share file formats, not code.
"""

from __future__ import annotations


class BridgeError(Exception):
    """Base class; ``code`` is the stable machine-readable identifier."""

    code = "bridge"


class ConfigError(BridgeError):
    code = "config"


class FormatError(BridgeError):
    """Container bytes that are not ours at all."""

    code = "format"


class UnsupportedError(BridgeError):
    """Recognized container, but a version or dtype we cannot handle."""

    code = "unsupported"


class CorruptError(BridgeError):
    """Recognized container with damaged or non-finite contents."""

    code = "corrupt"


class StateError(BridgeError):
    code = "state"
