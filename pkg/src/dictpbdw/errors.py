"""Exception hierarchy shared by all modules."""


class DictPBDWError(Exception):
    """Base class for errors raised by this package."""


class NumericalError(DictPBDWError, ArithmeticError):
    """A factorization or solve could not be carried out reliably."""


class IllPosedError(NumericalError):
    """PBDW problem with a (numerically) singular cross-Gramian."""

    def __init__(self, sigma_min, threshold):
        self.sigma_min = float(sigma_min)
        self.threshold = float(threshold)
        super().__init__(
            f"cross-Gramian smallest singular value {self.sigma_min:.3e} "
            f"<= threshold {self.threshold:.1e}: V and W-perp intersect"
        )


class RankError(DictPBDWError, ValueError):
    """Linearly dependent input vectors where independence is required."""

    def __init__(self, message, dropped=()):
        self.dropped = tuple(dropped)
        super().__init__(message)


class DomainError(DictPBDWError, ValueError):
    """Argument outside the domain where a formula or model is valid."""


class ModelError(NumericalError):
    """State solve failed for a given parameter."""


class ConfigError(DictPBDWError, ValueError):
    """Invalid or inconsistent run configuration."""


class ArtifactError(DictPBDWError, OSError):
    """Missing, corrupt or mutually inconsistent persisted artifacts."""


class ConvergenceWarning(UserWarning):
    """Iterative solver stopped before meeting its tolerance."""
