"""Exception types shared across the toolkit."""


class CtcgError(Exception):
    """Base class for all toolkit errors."""


class UnknownSymbolError(CtcgError, KeyError):
    """A symbol string is not part of the alphabet."""

    def __str__(self) -> str:
        # KeyError repr-quotes its argument; keep the plain message.
        return self.args[0] if self.args else ""


class InvalidConfigError(CtcgError, ValueError):
    """A configuration value violates its constraints."""


class DimensionMismatchError(CtcgError, ValueError):
    """An input array does not have the expected shape."""


class TraceMismatchError(CtcgError, ValueError):
    """A backward call does not match the trace produced by forward."""


class InfeasibleError(CtcgError, ValueError):
    """The target sequence cannot be aligned to the given frame count."""


class EmptyReferenceError(CtcgError, ValueError):
    """Error-rate computation over references of total length zero."""


class ShapeMismatchError(CtcgError, ValueError):
    """Two arrays that must share a shape do not."""


class AlphabetMismatchError(CtcgError, ValueError):
    """Two components disagree on the symbol inventory size."""


class BadWeightsError(CtcgError, ValueError):
    """Fusion weights are negative or do not sum to one."""


class OutOfRangeError(CtcgError, ValueError):
    """A value lies outside its documented range."""


class EmptyDatasetError(CtcgError, ValueError):
    """An operation requires at least one utterance."""


class UnknownUtteranceError(CtcgError, KeyError):
    """No utterance with the requested id.

    Inherits KeyError for lookup semantics; the message stays unquoted.
    """

    def __str__(self) -> str:
        return self.args[0] if self.args else ""


class EmptySpikeSetError(CtcgError, ValueError):
    """Coverage of an empty spike set is undefined."""


class BadCheckpointError(CtcgError, ValueError):
    """A checkpoint file is truncated or has an unexpected header."""


class NonFiniteGradientError(CtcgError, RuntimeError):
    """A gradient contains NaN or infinite entries."""


class NonFiniteLossError(CtcgError, RuntimeError):
    """A training loss became NaN or infinite."""


class ParseError(CtcgError, ValueError):
    """A file is malformed; the message names the location."""
