"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """An operation was evaluated at a point where it is singular (e.g. zero noise)."""


class SamplerDivergenceError(RuntimeError):
    """A sampler produced a non-finite state."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        msg = f"sampler state became non-finite at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"training loss became non-finite at step {step}")


class ConfigError(ValueError):
    """A run configuration is invalid or inconsistent."""
