"""Exception hierarchy.

Everything raised on bad input derives from :class:`TauScreenError`; the CLI
maps :class:`DataError` subclasses to exit code 2.
"""


class TauScreenError(Exception):
    pass


class DataError(TauScreenError, ValueError):
    """Input data cannot be analysed as given."""


class DegenerateDesign(DataError):
    """All design variates are equal, so no pair is ordered."""


class LengthMismatch(DataError):
    pass


class InvalidN(DataError):
    pass


class TooLarge(TauScreenError):
    """Exact enumeration would exceed the configured budget."""


class EmptyGrid(TauScreenError):
    """No upper-tail probability of the null law lies below eta."""


class Unattainable(TauScreenError):
    """The discrete null cannot reach the requested per-test level."""


class Infeasible(TauScreenError):
    """No critical vector achieves the requested global size."""


class MissingPairMean(TauScreenError, KeyError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RaggedRow(ParseError):
    pass


class NonNumeric(ParseError):
    pass
