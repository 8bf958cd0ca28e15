# app/exceptions.py
# Error hierarchy shared by the services and the CLI


class RiskGovError(Exception):
    """Base class for all toolkit errors; carries the CLI exit code."""
    exit_code = 2


class ConfigurationError(RiskGovError):
    """Invalid parameters or configuration values."""
    exit_code = 1


class DomainError(RiskGovError):
    """A time or value queried outside the domain of a function."""
    pass


class StateError(RiskGovError):
    """An operation received a banking system state it cannot work on."""
    pass


class SingularDenominatorError(RiskGovError):
    """The gamma extraction hit |xbar - xi_minus| below the configured floor."""

    def __init__(self, step, time, denominator):
        self.step = step
        self.time = time
        self.denominator = denominator
        super().__init__(
            f"Singular denominator |xbar - xi_minus| = {denominator:.3e} "
            f"at step {step} (t = {time:.6f})"
        )


class GovernanceError(RiskGovError):
    """The governance loop could not produce a decision."""
    pass


class OutputError(RiskGovError):
    """Result files could not be written."""
    exit_code = 3
