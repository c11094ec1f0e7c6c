"""Exception hierarchy shared by all qsfilter modules."""


class QSFilterError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatchError(QSFilterError, ValueError):
    pass


class NumericalConsistencyError(QSFilterError):
    """A quantity that must be real (or exact) came out inconsistent."""


class PositivityViolationError(QSFilterError):
    """A state had an eigenvalue below the repair tolerance."""

    def __init__(self, eigenvalue, tol, step=None, trajectory=None):
        self.eigenvalue = float(eigenvalue)
        self.tol = float(tol)
        self.step = step
        self.trajectory = trajectory
        where = "" if step is None else f" at step {step}"
        where += "" if trajectory is None else f" of trajectory {trajectory}"
        super().__init__(
            f"positivity violation{where}: min eigenvalue {self.eigenvalue:.3e} < -{self.tol:.1e}"
        )


class DegenerateStateError(QSFilterError):
    pass


class ClassicalityViolationError(QSFilterError, ValueError):
    """Noise coefficients do not define a self-adjoint process."""


class InvalidCovarianceError(QSFilterError, ValueError):
    pass


class InvalidKernelError(QSFilterError, ValueError):
    pass


class StepTooCoarseError(QSFilterError, ValueError):
    """Per-step event probability exceeds the thinning guard."""


class ZeroRateJumpError(QSFilterError):
    """A count was observed while the predicted intensity vanished."""

    def __init__(self, rate, step=None, trajectory=None):
        self.rate = float(rate)
        self.step = step
        self.trajectory = trajectory
        where = "" if step is None else f" at step {step}"
        where += "" if trajectory is None else f" of trajectory {trajectory}"
        super().__init__(f"count observed with predicted intensity {self.rate:.3e}{where}")


class DegenerateUpdateError(QSFilterError):
    pass


class ConfigError(QSFilterError, ValueError):
    """Scenario file could not be parsed or failed validation."""

    def __init__(self, field, message, line=None):
        self.field = field
        self.line = line
        loc = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}: {message}{loc}")
