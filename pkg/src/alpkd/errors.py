"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters: ConfigError -> 2, DivergenceError -> 3, everything I/O-ish -> 4.
"""


class AlpkdError(Exception):
    """Base class for all package errors."""


class ShapeError(AlpkdError):
    """Tensor operands have incompatible shapes."""


class InputError(AlpkdError):
    """Bad runtime input: out-of-range token id, unknown label, etc."""


class ConfigError(AlpkdError):
    """Invalid configuration: bad plan, bad hyperparameters, unknown keys."""


class FormatError(AlpkdError):
    """Malformed file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DivergenceError(AlpkdError):
    """Training produced a non-finite loss; the run is aborted."""
