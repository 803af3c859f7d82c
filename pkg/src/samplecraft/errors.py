"""Exception types shared across the package; the CLI maps them to exit codes."""


class SamplecraftError(Exception):
    exit_code = 2


class UsageError(SamplecraftError, ValueError):
    """Bad arguments or preconditions (CLI exit code 1)."""

    exit_code = 1


class NumericError(SamplecraftError, ArithmeticError):
    """Non-finite values appeared in a computation."""


class ConfigError(SamplecraftError):
    """Missing or malformed target, image or checkpoint file."""


class ParseError(UsageError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column
        self.message = message
