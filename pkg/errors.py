"""
Exception hierarchy shared by the kernel, simulation, estimation and pipeline
layers. Every class carries a short `code` that ends up in failures.csv.
"""


class PlmDivideError(Exception):
    code = "E_PLM"


class ArgumentError(PlmDivideError, ValueError):
    code = "E_ARGUMENT"


class DomainError(ArgumentError):
    code = "E_DOMAIN"


class NumericError(PlmDivideError, ArithmeticError):
    code = "E_NUMERIC"


class ConvergenceError(NumericError):
    """Coordinate descent ran out of sweeps. Keeps the last iterate."""

    code = "E_CONVERGENCE"

    def __init__(self, message, beta=None, kkt_residual=float("nan"), sweeps=0):
        super().__init__(message)
        self.beta = beta
        self.kkt_residual = kkt_residual
        self.sweeps = sweeps


class DegenerateColumnError(NumericError):
    code = "E_DEGENERATE"

    def __init__(self, column, tau2):
        super().__init__(
            f"nodewise regression degenerate at column {column}: "
            f"tau^2 = {tau2:.3e} < 1e-12"
        )
        self.column = column
        self.tau2 = tau2


class TuningError(PlmDivideError, RuntimeError):
    code = "E_TUNING"


class ConfigError(PlmDivideError, ValueError):
    code = "E_CONFIG"


class OutputError(PlmDivideError, OSError):
    code = "E_OUTPUT"

    def __init__(self, path, cause):
        super().__init__(f"Cannot write {path}: {cause}")
        self.path = path
