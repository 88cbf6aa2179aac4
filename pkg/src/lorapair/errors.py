"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so every error raised by library
code should be one of these.
"""


class LorapairError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(LorapairError, ValueError):
    """Input data or arguments violate a precondition."""


class ShapeError(ValidationError):
    """Tensor shapes are incompatible for the requested operation."""


class RankError(ValidationError):
    """Adapter rank outside 1 <= r < min(d, k)."""


class ConfigError(ValidationError):
    """Run configuration is malformed or inconsistent."""


class ParseError(ValidationError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StateError(LorapairError, RuntimeError):
    """Operation not allowed in the object's current state (e.g. merged adapter)."""


class ContractError(LorapairError, RuntimeError):
    """A call violated an API contract, e.g. backward on a non-scalar."""


class CheckpointError(LorapairError, OSError):
    """Checkpoint file missing, unreadable or of the wrong format."""

    exit_code = 2


class TrainingDivergence(LorapairError, ArithmeticError):
    """Loss became non-finite during training."""

    exit_code = 3


class SuiteError(LorapairError, RuntimeError):
    """One configuration of an ablation suite failed."""

    def __init__(self, configuration, cause):
        super().__init__(f"ablation run {configuration!r} failed: {cause}")
        self.configuration = configuration
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
