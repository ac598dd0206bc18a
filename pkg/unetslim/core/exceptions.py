"""Exceptions raised by unetslim.

All of them subclass ValueError so code catching ValueError keeps working.
"""


class ShapeError(ValueError):
    """Array has the wrong rank or mismatching dimensions."""


class DomainError(ValueError):
    """Values outside the domain of an operation (non-finite, all-zero, ...)."""


class ArgumentError(ValueError):
    """Scalar argument out of its allowed range."""


class SingularMatrixError(ValueError):
    """Linear system is singular or too close to singular to solve."""

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class DegeneratePointError(ValueError):
    """Differentiation requested at a point where the active set may switch."""

    def __init__(self, message, index=None, constraint=None):
        super().__init__(message)
        self.index = index
        self.constraint = constraint


class ContractError(ValueError):
    """Operation called outside the conditions under which it is valid."""


class TensorFileError(OSError):
    """Tensor, clip or manifest file missing, truncated or malformed."""

    def __init__(self, message, path=None):
        super().__init__(f"{message}: {path}" if path is not None else message)
        self.path = path
