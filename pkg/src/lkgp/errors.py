"""Exception hierarchy shared by all lkgp modules."""


class LkgpError(Exception):
    """Base class for every error raised by lkgp."""


class ShapeMismatch(LkgpError, ValueError):
    pass


class DuplicateObservation(LkgpError, ValueError):
    pass


class IndexOutOfGrid(LkgpError, IndexError):
    pass


class EmptyMask(LkgpError, ValueError):
    pass


class ParseError(LkgpError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class OracleTooLarge(LkgpError, MemoryError):
    """Dense reference computation requested above its size guard."""


class NumericalError(LkgpError, ArithmeticError):
    """Base class for failures the CLI reports with exit code 3."""


class NumericalBreakdown(NumericalError):
    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class NotPSD(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = reports or []
