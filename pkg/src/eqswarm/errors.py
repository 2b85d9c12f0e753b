"""Exception types shared across the package."""


class EqswarmError(Exception):
    """Base class for all package errors."""


class ConfigError(EqswarmError):
    """Invalid or inconsistent configuration (bad counts, unknown keys, ...)."""


class ContractError(EqswarmError):
    """A caller violated an operation's precondition (shape/NaN/count mismatch)."""


class CheckpointError(EqswarmError):
    """Checkpoint file is corrupt or incompatible with the requested policy."""


class IncompatibleArchError(EqswarmError):
    """Policy architecture cannot run on the requested scenario (e.g. fixed-width
    observation vs. a different agent count)."""


class TrainingError(EqswarmError):
    """Training aborted (non-finite loss or similar irrecoverable state)."""
