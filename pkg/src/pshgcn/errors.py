"""Exception types shared across the package."""


class GraphError(ValueError):
    """Graph data violates its declared schema (bad edge, bad signature, ...)."""


class DataError(ValueError):
    """A dataset directory or file is missing, malformed, or inconsistent."""


class NumericError(ArithmeticError):
    """A numeric computation produced non-finite values or failed to converge."""


class StoreError(ValueError):
    """A propagation store is missing a required entry or is corrupt."""


class UsageError(ValueError):
    """Command line arguments or configuration are invalid."""
