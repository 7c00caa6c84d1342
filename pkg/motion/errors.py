class DataError(ValueError):
    """Invalid or unreadable motion data."""


class FormatError(DataError):
    """A sequence or manifest file does not follow the on-disk format."""
