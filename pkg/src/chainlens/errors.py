"""Exception hierarchy.

Every error raised on bad data derives from :class:`ChainLensError`; the CLI
maps these to exit status 1 and prints the class name as the error category.
"""


class ChainLensError(Exception):
    """Base class for data errors."""


class MalformedTransaction(ChainLensError):
    pass


class MalformedBlock(ChainLensError):
    pass


class NegativeFee(ChainLensError):
    pass


class BadMagic(ChainLensError):
    pass


class TruncatedBlock(ChainLensError):
    pass


class SchemaError(ChainLensError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DanglingInput(ChainLensError):
    pass


class DoubleSpend(ChainLensError):
    pass


class EmptyStore(ChainLensError):
    pass


class EmptyGraph(ChainLensError):
    pass


class UnknownVertex(ChainLensError):
    pass


class UnknownAddress(ChainLensError):
    pass


class UnknownCluster(ChainLensError):
    pass


class MissingRate(ChainLensError):
    pass


class PatternInvalid(ChainLensError):
    pass


class NotBuilt(ChainLensError):
    pass


class StoreFormatError(ChainLensError):
    pass


class StoreLocked(ChainLensError):
    pass
