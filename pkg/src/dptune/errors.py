"""Exception hierarchy shared by every dptune module."""

from __future__ import annotations


class DPTError(Exception):
    """Base class for all dptune errors."""


class UsageError(DPTError, ValueError):
    """An argument violates an operation's preconditions."""


class GenerationError(DPTError):
    """Writing a synthetic dataset failed."""

    def __init__(self, path, cause: BaseException):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"dataset generation failed at {self.path}: {cause}")


class DatasetIntegrityError(DPTError):
    """An item file is missing or its size disagrees with the manifest."""


class SinkOverflowError(DPTError):
    """A batch does not fit in a consumer's memory budget."""

    def __init__(self, seq: int, batch_bytes: int, budget: int):
        self.seq = seq
        self.batch_bytes = batch_bytes
        self.budget = budget
        super().__init__(
            f"batch {seq} needs {batch_bytes} B but the sink budget is {budget} B"
        )


class TrialError(DPTError):
    """A loader or dataset failure raised while measuring one grid cell."""

    def __init__(self, n_worker: int, n_prefetch: int, cause: BaseException):
        self.n_worker = n_worker
        self.n_prefetch = n_prefetch
        self.cause = cause
        super().__init__(
            f"trial (workers={n_worker}, prefetch={n_prefetch}) failed: {cause}"
        )


class NoFeasibleConfigurationError(DPTError):
    """Every cell of the search grid overflowed."""


class ReportFormatError(DPTError):
    """A grid or outcome file could not be parsed."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")
