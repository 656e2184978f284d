"""Exception hierarchy shared by every module."""


class SourceFictionError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(SourceFictionError, ValueError):
    """An argument is out of range or has inconsistent dimensions."""


class FormatError(SourceFictionError, ValueError):
    """A file could not be parsed. ``row`` is the 1-based line number, if known."""

    def __init__(self, message, row=None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class PreconditionError(SourceFictionError):
    pass


class DivergenceError(SourceFictionError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch, loss):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class DegenerateInputError(SourceFictionError):
    pass


class BoundViolationError(SourceFictionError):
    def __init__(self, epsilon, bound):
        self.epsilon = epsilon
        self.bound = bound
        super().__init__(
            f"epsilon={epsilon!r} exceeds the monotonicity bound {bound!r}; "
            "pass allow_exceed_bound=True to force it"
        )


class ScaleError(SourceFictionError):
    pass


class NonConvergenceError(SourceFictionError):
    pass


class InstabilityError(SourceFictionError):
    """Sinkhorn scaling produced non-finite potentials."""

    def __init__(self, reg, detail=""):
        self.reg = reg
        msg = f"Sinkhorn became numerically unstable with reg={reg!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class DegenerateCouplingError(SourceFictionError):
    def __init__(self, row):
        self.row = row
        super().__init__(f"coupling row {row} carries no mass")


class StageError(SourceFictionError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
