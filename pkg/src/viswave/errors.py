"""Exception taxonomy shared across the package."""


class VisWaveError(Exception):
    """Base class for all package errors."""


class ConfigError(VisWaveError):
    """Invalid or unknown configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


class DomainError(VisWaveError):
    """Numeric argument outside the operation's domain."""


class ShapeError(VisWaveError):
    """Array shapes incompatible with the network spec; names the layer."""


class NumericError(VisWaveError):
    """Non-finite value produced where finiteness is required."""


class UnsupportedVersionError(VisWaveError):
    """Serialized artifact has a format_version this build cannot read."""


class TruncatedFileError(VisWaveError):
    """Binary payload shorter/longer than the manifest implies."""


class MalformedCsvError(VisWaveError):
    """CSV payload does not match the expected schema."""
