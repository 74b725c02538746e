"""Exception hierarchy shared by all modules.

Each error carries the CLI exit code it maps to: 2 for bad input data,
3 for numerical failures.
"""


class JointCharError(Exception):
    exit_code = 2


class DataError(JointCharError):
    exit_code = 2


class NumericalError(JointCharError):
    exit_code = 3


# linear algebra / PCA
class EmptyMatrix(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class NotSymmetric(DataError):
    pass


class DegenerateData(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


# t-SNE
class InvalidConfig(DataError):
    pass


class DegenerateRow(NumericalError):
    pass


class NonFinite(NumericalError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


# cube i/o
class MissingKey(DataError):
    def __init__(self, name):
        super().__init__(f"missing header key: {name!r}")
        self.name = name


class UnsupportedDataType(DataError):
    pass


class MalformedList(DataError):
    pass


class SizeMismatch(DataError):
    pass


class RangeOutOfBounds(DataError):
    pass


class WindowOutOfBounds(DataError):
    pass


class NoBandsRetained(DataError):
    pass


class ImageFormatError(DataError):
    pass


# joint space
class LengthMismatch(DataError):
    pass


class RowOrderMismatch(DataError):
    pass


class UnknownAxis(DataError):
    pass


class InvalidRoi(DataError):
    pass


class EmptyRoi(DataError):
    pass


class GridMismatch(DataError):
    pass


class SingularCovariance(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class CoordinateOutOfBounds(DataError):
    pass


class EmptyGroup(DataError):
    pass


# plotting
class UnknownColumn(DataError):
    pass
