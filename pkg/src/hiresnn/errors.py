"""Exception types shared across the package.

The CLI maps these onto exit codes (see ``hiresnn.cli``).
"""


class ConfigurationError(ValueError):
    """Inconsistent shapes, geometry or hyperparameters."""


class InputError(ValueError):
    """Data outside the domain an operation accepts."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition (mode, lengths)."""


class StateError(RuntimeError):
    """Neuron state became invalid (e.g. non-positive threshold)."""


class TrainingError(RuntimeError):
    """Training diverged."""


class DataFormatError(ValueError):
    """Malformed dataset file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DependencyError(RuntimeError):
    """A required upstream artifact (e.g. checkpoint) is missing."""
