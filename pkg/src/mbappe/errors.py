"""Exception types shared across the package."""


class MbappeError(Exception):
    """Base class for all package errors."""


class ConfigError(MbappeError):
    """Invalid configuration: unknown key, bad value, or empty candidate set."""


class MalformedInputError(MbappeError):
    """Structurally invalid input data (too few poses, mismatched lengths, ...)."""


class ScenarioInvalidError(MbappeError):
    """A scenario violates its invariants and cannot be simulated."""


class PredictionUnavailableError(MbappeError):
    """A file-backed predictor has no record for a required key."""


class InternalStateError(MbappeError):
    """An operation was called on a tree node in the wrong state."""


class EpisodeError(MbappeError):
    """A closed-loop episode failed; the message names the failing combination."""
