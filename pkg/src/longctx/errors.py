"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration problems exit with 2,
data/validation problems with 3, numeric failures with 4.
"""


class LongCtxError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(LongCtxError):
    """Invalid model/strategy configuration (bad dimensions, infeasible parameters)."""


class DimensionError(ConfigurationError):
    """Vector or matrix shapes incompatible with the requested operation."""


class PositionError(LongCtxError):
    """Position id outside the active position table or target window."""


class LengthError(LongCtxError):
    """Input longer than the target context window."""


class EmptyInputError(LongCtxError):
    """Operation requires at least one active token / item."""


class GenerationError(LongCtxError):
    """A synthetic generator cannot satisfy its contract (exhausted names, short essay)."""


class ValidationError(LongCtxError):
    """Task data is internally inconsistent (dangling ids, missing judgments)."""


class ParseError(ValidationError):
    """A task file line could not be parsed."""


class EvaluationError(LongCtxError):
    """Metrics were handed inconsistent rankings or judgments."""


class NumericError(LongCtxError):
    """A numeric failure (NaN loss, divergence) aborted the run."""
