"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violates a documented precondition (shape, length, range)."""


class DataError(RuntimeError):
    """A file, manifest or dataset on disk is missing or malformed."""


class NumericalError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, sample_ids=()):
        super().__init__(message)
        self.sample_ids = list(sample_ids)
