"""Exception hierarchy shared across the package.

Each class maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class SafebalError(Exception):
    """Base class for all package errors."""


class ConfigError(SafebalError):
    """Invalid configuration: bad values, unknown keys, infeasible settings."""


class ParseError(SafebalError):
    """Malformed input file. Carries file path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ContractError(SafebalError):
    """A caller violated an interface precondition (shape/alignment/domain)."""


class TrainingError(SafebalError):
    """Training failed: non-finite loss or gradients, divergence."""
