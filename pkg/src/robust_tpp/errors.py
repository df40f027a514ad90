"""Exception hierarchy. The CLI maps each family to an exit code."""


class RobustTPPError(Exception):
    exit_code = 3


class ConfigError(RobustTPPError, ValueError):
    exit_code = 1


class DataError(RobustTPPError, ValueError):
    exit_code = 2


class NumericalError(RobustTPPError, ArithmeticError):
    exit_code = 3


class EmptyStream(DataError):
    pass


class DegenerateWeights(NumericalError):
    pass


class EmptyClass(NumericalError):
    pass


class ImpossibleStream(NumericalError):
    pass
