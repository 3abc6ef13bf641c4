"""Exception types shared across the package."""


class PopError(Exception):
    """Base class for every error raised by popood."""


class InvalidTreeError(PopError, ValueError):
    pass


class InvalidClassError(PopError, IndexError):
    pass


class ConstraintViolationError(PopError, ValueError):
    pass


class InvalidArgumentError(PopError, ValueError):
    pass


class NotPSDError(PopError, ValueError):
    """Similarity matrix has an eigenvalue below the clamping tolerance."""

    def __init__(self, eigenvalue: float):
        self.eigenvalue = eigenvalue
        super().__init__(f"similarity matrix is not positive semidefinite: eigenvalue {eigenvalue:.6g}")


class PreconditionError(PopError, ValueError):
    pass


class ProxyLabelError(PopError, ValueError):
    pass


class InsufficientDataError(PopError, ValueError):
    pass


class NumericalError(PopError, ArithmeticError):
    pass


class FormatError(PopError, ValueError):
    """Malformed input file; carries the path and (when known) line number."""

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")
