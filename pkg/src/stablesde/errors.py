"""Exception types shared across the package.

Two broad families matter for callers: user-input problems (bad
expressions, bad configs, bad data files) and numerical failures
(quadrature that does not converge, samplers that stall, exploding
paths).  The CLI maps the first family to exit code 1 and the second
to exit code 2.
"""

from __future__ import annotations


class StableSDEError(Exception):
    """Base class for all package-specific errors."""


class UserInputError(StableSDEError):
    """Invalid input supplied by the caller (config, expression, data)."""


class NumericalError(StableSDEError):
    """A numerical routine failed to reach its accuracy or sampling goal."""


class ExpressionParseError(UserInputError):
    """Raised when an expression string cannot be parsed.

    Carries the character offset of the first offending token.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UndeclaredIdentifierError(UserInputError):
    """An expression references a name that was never declared."""

    def __init__(self, name: str, offset: int | None = None):
        loc = "" if offset is None else f" (at offset {offset})"
        super().__init__(f"undeclared identifier {name!r}{loc}")
        self.name = name
        self.offset = offset


class EvaluationError(NumericalError):
    """Expression evaluation hit an invalid operand (log(-1), 1/0, ...).

    ``span`` locates the offending node in the source string when the
    AST was produced by the parser.
    """

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        loc = "" if span is None else f" (source span {span[0]}:{span[1]})"
        super().__init__(f"{message}{loc}")
        self.span = span


class ModelViolationError(NumericalError):
    """The scale coefficient failed positivity at some path point."""

    def __init__(self, message: str, index: int | None = None):
        loc = "" if index is None else f" (observation index {index})"
        super().__init__(f"{message}{loc}")
        self.index = index


class QuadratureError(NumericalError):
    """Quadrature failed to converge within the node budget."""

    def __init__(self, message: str, achieved_error: float):
        super().__init__(f"{message} (achieved error estimate {achieved_error:.3e})")
        self.achieved_error = achieved_error


class SamplerStallError(NumericalError):
    """Rejection sampling exceeded its proposal budget."""

    def __init__(self, x: float, attempts: int, iteration: int | None = None):
        where = "" if iteration is None else f" (chain iteration {iteration})"
        super().__init__(
            f"conditional variance sampler stalled at x={x!r} "
            f"after {attempts} proposals{where}"
        )
        self.x = x
        self.attempts = attempts
        self.iteration = iteration


class SimulationError(NumericalError):
    """A simulated path left the admissible region."""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(UserInputError):
    """An experiment config failed validation.

    ``violations`` lists every problem found, not just the first.
    """

    def __init__(self, violations: list[str]):
        super().__init__("invalid config: " + "; ".join(violations))
        self.violations = list(violations)


class DataFileError(UserInputError):
    """A data file could not be read into an observation set."""
