"""Exception types.  Each carries the CLI exit code it maps to."""


class KContactError(Exception):
    exit_code = 1


class InvalidInputError(KContactError, ValueError):
    exit_code = 3


class ModelConfigurationError(KContactError, ValueError):
    exit_code = 2


class ConfigError(KContactError, ValueError):
    exit_code = 2


class DataError(KContactError, ValueError):
    exit_code = 3


class NumericalIntegrationError(KContactError, ArithmeticError):
    pass


class UnsupportedModelError(KContactError, TypeError):
    pass


class EnvelopeTooSmallError(KContactError, RuntimeError):
    pass
