class NumericalError(RuntimeError):
    """A solver could not produce a trustworthy result (bracket failure, LP residuals)."""


class NotConvergedWarning(RuntimeWarning):
    pass
