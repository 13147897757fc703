"""Exception hierarchy.

Each class carries the process exit code the CLI maps it to:
2 for usage problems, 3 for bad data or formats, 4 for numeric failures.
"""


class RiskdecError(Exception):
    exit_code = 3


class UsageError(RiskdecError):
    exit_code = 2


class ConfigurationError(UsageError):
    pass


class FormatError(RiskdecError, ValueError):
    pass


class ParseError(FormatError):
    pass


class TruncatedFileError(RiskdecError, OSError):
    pass


class DataValidationError(RiskdecError, ValueError):
    pass


class ContractError(RiskdecError, ValueError):
    """Inputs violate an operation's preconditions (shapes, sizes)."""


class PlanError(RiskdecError, ValueError):
    pass


class SamplingError(RiskdecError, ValueError):
    pass


class EstimationError(RiskdecError, ValueError):
    pass


class CoverageError(RiskdecError, ValueError):
    pass


class RankDeficiencyError(RiskdecError, ValueError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class NumericError(RiskdecError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnidentifiableError(NumericError):
    pass
