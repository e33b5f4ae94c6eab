class ConfigurationError(ValueError):
    """Invalid simulation or construction parameters."""


class DomainError(ValueError):
    """Arguments outside an operation's domain (shapes, lengths, indices)."""


class OverSaturationError(DomainError):
    """More users in the support than chips; per-column least squares is underdetermined.

    ``partial`` carries the detection state reached before the failure, if any.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
