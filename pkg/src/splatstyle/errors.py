"""Exception types shared across the package."""


class SplatStyleError(Exception):
    """Base class for all package-specific errors."""


class PlyFormatError(SplatStyleError):
    """Malformed PLY input (missing field, bad header, truncated body)."""


class UnsupportedEncodingError(PlyFormatError):
    """PLY encodings other than binary little-endian."""


class ConfigError(SplatStyleError):
    """Invalid run configuration. Carries the offending config key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class CapacityError(SplatStyleError):
    """A dense buffer would exceed its size guard."""


class DegenerateEmbeddingError(SplatStyleError):
    """Embedding arithmetic collapsed to a (near-)zero vector."""


class ProviderContractError(SplatStyleError):
    """A provider returned output violating its declared contract."""


class NonFiniteLossError(SplatStyleError):
    """Optimization produced a non-finite loss; carries the run record so far."""

    def __init__(self, message: str, record=None):
        self.record = record
        super().__init__(message)
