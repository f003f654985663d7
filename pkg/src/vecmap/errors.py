"""Error types shared across the package.

The CLI maps these onto exit codes: ContractError -> 2, IOFormatError -> 3,
NumericalError -> 4.
"""


class VecmapError(Exception):
    """Base class for all package errors."""


class ContractError(VecmapError):
    """A precondition, shape contract, or schema was violated."""


class NumericalError(VecmapError):
    """A NaN or Inf appeared where only finite values are allowed."""


class GenerationError(VecmapError):
    """A scene spec cannot be satisfied (e.g. too many instances for the range)."""


class IOFormatError(VecmapError):
    """A file is malformed, missing, or would be overwritten without --force."""
