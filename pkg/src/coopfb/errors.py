"""Exception hierarchy."""


class CoopFeedbackError(Exception):
    """Base class for all errors raised by coopfb."""


class InvalidInputError(CoopFeedbackError, ValueError):
    pass


class InvalidDimensionError(InvalidInputError):
    pass


class CapacityError(CoopFeedbackError, ValueError):
    """Explicit codebook would be too large to enumerate."""


class DegenerateStatisticsError(CoopFeedbackError, ValueError):
    pass


class IntegrationError(CoopFeedbackError, ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class SingularityError(CoopFeedbackError, ArithmeticError):
    def __init__(self, message, condition_number=None):
        if condition_number is not None:
            message = f"{message} (condition number={condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class PartitionError(CoopFeedbackError, ArithmeticError):
    pass


class ConfigError(CoopFeedbackError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key
