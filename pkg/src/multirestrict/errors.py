"""Exception types shared by all modules."""


class WorkbenchError(Exception):
    """Base class. ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class InvalidInput(WorkbenchError, ValueError):
    exit_code = 2


class DomainError(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass


class NoSolution(WorkbenchError):
    pass


class DegenerateGeometry(WorkbenchError):
    pass


class PartitionFailure(WorkbenchError):
    def __init__(self, msg, best_imbalance=None):
        super().__init__(msg)
        self.best_imbalance = best_imbalance


class ConvergenceFailure(WorkbenchError):
    pass


class CertificateFailure(WorkbenchError):
    pass


class InternalError(WorkbenchError):
    pass
