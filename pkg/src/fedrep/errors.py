"""Exception types shared across the package."""


class FedrepError(Exception):
    """Base class for all fedrep-specific failures."""


class DataError(FedrepError):
    """Raised when input data violates the documented ingestion contract."""


class CodecError(FedrepError):
    """Raised when an encoded parameter payload cannot be decoded.

    Covers both malformed payloads and authentication failures of the
    symmetric scheme.
    """
