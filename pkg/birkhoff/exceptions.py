from typing import Optional


class BirkhoffError(Exception):
    """Base exception for the toolkit"""
    exit_code = 1


class ConfigError(BirkhoffError):
    """Raised when a run config cannot be parsed or validated"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(BirkhoffError):
    """Raised when arguments to an operation are invalid"""
    pass


class BudgetError(BirkhoffError):
    """Raised when an enumeration or materialization budget is exceeded"""
    pass


class InfeasibleError(BirkhoffError):
    """Raised when a level set, grid or gap does not exist at this resolution"""
    exit_code = 2


class ConvergenceError(BirkhoffError):
    """Raised when an iterative solver hits its iteration cap"""
    exit_code = 2


class VerificationError(BirkhoffError):
    """Raised when a numerical verification check fails"""
    exit_code = 3
