"""Exception hierarchy shared by all modules.

Each error class carries the CLI exit code it maps to.
"""


class RonchiError(Exception):
    exit_code = 1


class ConfigError(RonchiError, ValueError):
    exit_code = 2


class UnsupportedAberrationOrder(ConfigError):
    pass


class ShapeError(RonchiError, ValueError):
    exit_code = 2


class NumericError(RonchiError, ArithmeticError):
    exit_code = 3


class SimulationError(NumericError):
    pass


class EncodingError(ShapeError):
    pass


class TrainingError(NumericError):
    def __init__(self, message, epoch=None):
        super().__init__(message if epoch is None else f"{message} (epoch {epoch})")
        self.epoch = epoch


class RankError(NumericError):
    pass


class DegenerateWeightsError(NumericError):
    pass


class ResolutionError(NumericError):
    pass


class CounterexampleInvalid(NumericError):
    pass


class PersistenceError(RonchiError, OSError):
    exit_code = 4


class StepError(RonchiError):
    """Wraps a component failure inside the calibration loop with its step index."""

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
