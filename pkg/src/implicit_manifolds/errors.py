"""Exception types raised across the package."""


class InputShapeError(ValueError):
    """An array argument has the wrong dimension for the model it is fed to."""


class TrainingDivergenceError(RuntimeError):
    """Training produced non-finite values or runaway energies."""

    def __init__(self, message, *, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class SingularSystemError(RuntimeError):
    """Conjugate gradients hit a zero-curvature direction."""


class RankDeficiencyError(SingularSystemError):
    """The constraint Jacobian is (numerically) rank deficient at a point."""


class OffManifoldError(ValueError):
    """A point does not satisfy the constraint tolerance of the model."""


class ConvergenceWarning(UserWarning):
    """An iterative solver stopped before reaching its tolerance."""
