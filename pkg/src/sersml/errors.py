"""Exception hierarchy.

Every error raised on purpose by the library derives from :class:`SersError`.
The ``exit_code`` attribute is what the command line maps it to: 2 for
problems with input data, 3 for numeric or model failures.
"""


class SersError(Exception):
    exit_code = 3


class DataError(SersError):
    exit_code = 2


class FileError(DataError):
    """A spectrum, manifest or model file is missing or unparseable."""


class GridError(DataError):
    """A spectrum does not cover the requested wavenumber grid."""


class EmptyDataset(DataError):
    """No concentration class survived filtering."""


class DegenerateSpectrum(DataError):
    """A spectrum has zero intensity range and cannot be normalized."""


class InvalidPartition(DataError):
    """Augmentation was asked to draw from a validation or test row."""


class FoldError(DataError):
    """A class has fewer samples than the requested number of folds."""


class LengthMismatch(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class DomainError(SersError):
    """A value lies outside the domain of a function."""


class OrderTooLarge(SersError):
    pass


class ConfigError(SersError):
    exit_code = 1


class NonConvergence(SersError):
    """SMO ran out of iterations.

    The best-so-far fitted model is attached as ``model``.
    """

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model


class NumericalDivergence(SersError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateDataWarning(UserWarning):
    """Training data holds a single class; the fitted model is constant."""
