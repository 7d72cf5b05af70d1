"""Exception taxonomy shared across the package."""


class StaogError(Exception):
    """Base class for every error raised by this package."""


class FormatError(StaogError):
    """Malformed input file or inconsistent record (bad dims, bad schema)."""


class ArgumentError(StaogError):
    """Invalid argument values (out-of-range k, degenerate dataset, ...)."""


class InvariantError(StaogError):
    """A structural invariant was violated (e.g. not exactly one active leaf)."""


class InferenceError(StaogError):
    """The video admits no valid anchor placement."""
