"""Exception types shared across the package.

The CLI maps each family onto an exit code, so modules raise these rather
than bare ``ValueError`` when the failure is part of a documented contract.
"""


class ConvisaError(Exception):
    exit_code = 1


class ConfigError(ConvisaError, ValueError):
    exit_code = 2


class FormatError(ConvisaError, ValueError):
    exit_code = 3


class DimensionError(ConvisaError, ValueError):
    exit_code = 3


class NumericalError(ConvisaError, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericalError):
    pass
