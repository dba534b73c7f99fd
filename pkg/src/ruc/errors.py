"""Exception and warning types raised across the package.

Every domain error derives from :class:`RucError`; the CLI maps these to exit
code 1 and prints the class name.
"""


class RucError(Exception):
    """Base class for domain errors."""


# panel
class ParseError(RucError):
    pass


class DuplicateTimestamp(RucError):
    pass


class RaggedPanel(RucError):
    pass


class EmptySlice(RucError):
    pass


# grammar
class ExpressionSyntaxError(RucError):
    """Malformed expression text. ``offset`` is the 0-based character position."""

    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class UnknownOperator(RucError):
    pass


class UnknownVariable(RucError):
    pass


class ArityError(RucError):
    pass


class WindowError(RucError):
    pass


class DepthError(RucError):
    pass


# surrogate / safeguards / stats
class InsufficientData(RucError):
    pass


class NumericalFailure(RucError):
    pass


class NegativeTarget(RucError):
    pass


class NonConvergence(RucError):
    pass


class LengthMismatch(RucError):
    pass


class DegenerateDifferential(RucError):
    pass


# search
class NoMutationPossible(RucError):
    pass


class ConfigError(RucError):
    pass


class DegenerateCrossSection(UserWarning):
    """Cross-sectional operator applied to a panel with a single entity."""
