"""Exception hierarchy shared by every module of the package."""


class BistanetError(Exception):
    """Base class for all package errors."""


class NetworkValidationError(BistanetError, ValueError):
    pass


class SchemaError(NetworkValidationError):
    pass


class AsymmetricConductanceError(NetworkValidationError):
    pass


class NegativeConductanceError(NetworkValidationError):
    pass


class DisconnectedNetworkError(NetworkValidationError):
    def __init__(self, message="network is disconnected", iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class LawError(BistanetError, ValueError):
    pass


class LawDomainError(LawError):
    pass


class BranchInfeasibleError(LawError):
    pass


class SolverError(BistanetError):
    pass


class UnbalancedInjectionError(SolverError, ValueError):
    pass


class SingularSystemError(SolverError):
    pass


class IntegrationError(SolverError):
    """Raised when the integrator fails; carries the last valid trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class TrajectoryNotConvergedError(SolverError):
    pass


class EnumerationTooLargeError(BistanetError, ValueError):
    pass


class InfeasibleTargetError(BistanetError, ValueError):
    pass
