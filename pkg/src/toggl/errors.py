"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: configuration problems exit 2, bad
input data exits 3 and numeric failures exit 4.
"""


class TogglError(Exception):
    exit_code = 1


class ConfigError(TogglError, ValueError):
    exit_code = 2


class DataError(TogglError, ValueError):
    exit_code = 3


class NumericError(TogglError, ArithmeticError):
    exit_code = 4


class StreamUnderflowError(DataError):
    """A control token moved the speaker index below zero."""

    def __init__(self, position: int):
        super().__init__(f"speaker index underflow at stream position {position}")
        self.position = position


class InfeasibleTargetError(NumericError):
    """The CTC target cannot be aligned to the available frames."""

    def __init__(self, frames: int, required: int):
        super().__init__(f"CTC target needs at least {required} frames, got {frames}")
        self.frames = frames
        self.required = required
