"""Exception hierarchy."""


class VecGarchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(VecGarchError, ValueError):
    pass


class InvalidInputError(VecGarchError, ValueError):
    pass


class StationarityError(VecGarchError):
    pass


class ConstraintError(VecGarchError):
    pass


class PositivityError(VecGarchError):
    """A filtered conditional covariance left the PSD cone."""

    def __init__(self, t, min_eig):
        self.t = t
        self.min_eig = min_eig
        super().__init__(f"H_t lost positivity at t={t} (min eigenvalue {min_eig:.3e})")


class LikelihoodError(VecGarchError):
    """The quasi-likelihood could not be evaluated at some date."""

    def __init__(self, t, reason):
        self.t = t
        super().__init__(f"likelihood evaluation failed at t={t}: {reason}")


class DomainError(VecGarchError, ValueError):
    """Argument outside the open domain of a barrier / divergence."""


class InnerSolverError(VecGarchError):
    pass


class ConfigError(VecGarchError, ValueError):
    pass


class IngestionError(VecGarchError, ValueError):
    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class DegeneratePortfolioError(VecGarchError):
    pass
