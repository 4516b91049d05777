"""Exception types shared across the package.

The CLI maps each class onto a stable exit code, so library code should raise
the most specific one that applies.
"""


class WechselError(Exception):
    pass


class FormatError(WechselError, ValueError):
    """Malformed or truncated input file."""


class DimensionError(WechselError, ValueError):
    """Two inputs disagree on a dimension that must match."""


class TokenizerError(WechselError, ValueError):
    """Vocab and merges files are inconsistent with each other."""


class NoUsablePairsError(WechselError, ValueError):
    """A dictionary produced no pair with both words in vocabulary."""


class ConvergenceError(WechselError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
