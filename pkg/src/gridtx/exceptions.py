"""Exception hierarchy shared by all modules."""


class GridTxError(Exception):
    """Base class for package errors."""


class ConfigurationError(GridTxError, ValueError):
    """Illegal parameter or configuration."""


class DataError(GridTxError, ValueError):
    """Cell or map invariant violated."""


class IntegrityError(GridTxError):
    """Corrupted, truncated or inconsistent compressed data or message."""


class MalformedStreamError(IntegrityError):
    """Byte stream that does not follow the expected encoding."""


class UnsupportedFormatError(GridTxError):
    """Unknown magic, version or codec id, or an unsupported mode."""


class EncodingError(GridTxError):
    """Message cannot be encoded (e.g. a field overflows its width)."""
