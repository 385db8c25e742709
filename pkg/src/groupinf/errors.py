"""Exception types shared across the package.

The CLI maps ConfigError to exit code 1 and every other GroupInfError to
exit code 2; keep new exceptions under one of these two umbrellas.
"""


class GroupInfError(Exception):
    """Base class for all package errors."""


class ConfigError(GroupInfError):
    """Invalid or inconsistent run configuration; message names the field."""


class DataFormatError(GroupInfError):
    """Malformed input file (bad magic, truncated payload, bad CSV)."""


class SizeLimitError(GroupInfError):
    """A requested size exceeds what the inputs or limits allow."""


class TrainingError(GroupInfError):
    """Training diverged or could not satisfy its convergence contract."""


class NotPositiveDefiniteError(GroupInfError):
    """Cholesky factorization failed for the given damping."""


class DegenerateInputError(GroupInfError):
    """Statistic undefined on this input (e.g. rank correlation of a constant)."""


class StageError(GroupInfError):
    """Benchmark stage failure; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
