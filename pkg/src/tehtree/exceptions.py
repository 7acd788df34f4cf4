"""Exception hierarchy shared by every stage."""


class TEHTreeError(Exception):
    """Base class. ``stage`` is filled in by the pipeline when it re-raises."""

    stage = None

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class ValidationError(TEHTreeError, ValueError):
    """Input data or configuration violates a documented contract."""


class ParseError(ValidationError):
    """A CSV cell could not be read as a finite number."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DegenerateRegressorError(TEHTreeError, ValueError):
    """The regressor has zero variance, so its slope is not identified."""


class StageError(TEHTreeError, RuntimeError):
    """Wraps an unexpected failure inside a pipeline stage."""

    def __init__(self, stage, cause):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
