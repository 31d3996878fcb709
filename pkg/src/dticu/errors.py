"""Exception hierarchy shared across the package."""


class DtIcuError(Exception):
    """Base class for all package errors."""


class DimensionError(DtIcuError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(DtIcuError, ValueError):
    """A configuration value is outside its allowed domain."""


class DegenerateMaskError(DtIcuError, ValueError):
    """An attention query row has no admissible keys."""


class TrainingStateError(DtIcuError, RuntimeError):
    """Optimizer or training loop found inconsistent state (e.g. missing grads)."""


class ContractError(DtIcuError, ValueError):
    """A call violated a documented precondition."""


class IngestionError(DtIcuError, ValueError):
    """A cohort file failed schema validation."""

    def __init__(self, message, *, line=None, stay_id=None, field=None):
        parts = []
        if line is not None:
            parts.append(f"line {line}")
        if stay_id is not None:
            parts.append(f"stay {stay_id!r}")
        if field is not None:
            parts.append(f"field {field!r}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.stay_id = stay_id
        self.field = field


class CollateError(DtIcuError, ValueError):
    """Stays in one batch disagree on schema."""


class GenerationError(DtIcuError, ValueError):
    """A synthetic cohort configuration cannot be realised."""


class SamplerError(DtIcuError, ValueError):
    """Batch sampler cannot satisfy the requested balancing."""


class MetricUndefinedError(DtIcuError, ValueError):
    """A metric is mathematically undefined for the given inputs."""


class NonFiniteLossError(DtIcuError, FloatingPointError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, step, stay_ids, value):
        super().__init__(
            f"non-finite loss {value!r} at step {step} (batch stays: {', '.join(stay_ids)})"
        )
        self.step = step
        self.stay_ids = list(stay_ids)
        self.value = value


class CheckpointError(DtIcuError, ValueError):
    """Checkpoint files are missing, truncated or inconsistent."""
