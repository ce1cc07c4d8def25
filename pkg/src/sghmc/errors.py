"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value; `field` names the offending parameter."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DivergenceError(ArithmeticError):
    """A chain produced a non-finite value.

    `iteration` is the 0-based index of the step that failed and `where`
    says what went wrong (gradient, noise or the updated state).
    """

    def __init__(self, iteration: int, where: str, detail: str = ""):
        msg = f"non-finite {where} at iteration {iteration}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.iteration = iteration
        self.where = where


class UnsupportedCheck(RuntimeError):
    """Raised when an assumption check needs something the oracle lacks."""
