"""Exception hierarchy. Each class carries a short ``category`` used as the CLI exit label."""


class PistonError(Exception):
    category = "error"
    exit_code = 1


class ConfigurationError(PistonError, ValueError):
    category = "configuration"
    exit_code = 2


class InvalidStateError(PistonError, ValueError):
    category = "invalid-state"
    exit_code = 3


class DomainError(InvalidStateError):
    category = "domain"


class PositivityError(InvalidStateError):
    category = "positivity"


class IntegrationError(PistonError, RuntimeError):
    category = "integration"
    exit_code = 4


class WallCrashError(IntegrationError):
    category = "wall-crash"


class InstabilityError(IntegrationError):
    category = "instability"


class ReplayResolutionError(IntegrationError):
    category = "replay-resolution"
