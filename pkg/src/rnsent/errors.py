"""Exception types shared across the package."""


class RnsentError(Exception):
    pass


class DimensionError(RnsentError, ValueError):
    pass


class DomainError(RnsentError, ValueError):
    pass


class NumericError(RnsentError, ArithmeticError):
    """Non-finite values appeared during a forward or backward pass."""


class SingularMatrixError(NumericError):
    def __init__(self, message, condition=float("inf")):
        super().__init__(message)
        self.condition = condition


class DegenerateDistributionError(NumericError):
    """The tree distribution's Laplacian could not be factorised."""


class InvalidTreeError(RnsentError, ValueError):
    pass


class DataFormatError(RnsentError, ValueError):
    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.path = path
        self.line = line
