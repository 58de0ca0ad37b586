"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ParameterError -> 2,
DataFormatError (and subclasses) -> 3, NumericError -> 4.
"""


class SynthscanError(Exception):
    pass


class ParameterError(SynthscanError, ValueError):
    """Rejected input: out-of-range parameter, shape mismatch, bad dims."""


class DataFormatError(SynthscanError):
    """A file failed structural validation."""


class BadMagicError(DataFormatError):
    pass


class FormatVersionError(DataFormatError):
    pass


class ChecksumError(DataFormatError):
    pass


class CorruptDataError(DataFormatError):
    """Truncated payload, header/record length mismatch, or non-finite values."""


class NumericError(SynthscanError):
    """Non-finite loss or other numeric failure mid-computation."""


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
