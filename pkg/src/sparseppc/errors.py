"""Exception types shared across the package."""


class SparsePpcError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(SparsePpcError):
    """An argument violates a documented precondition."""


class DegeneracyError(SparsePpcError):
    """A matrix that must be invertible is numerically singular."""


class SolverError(SparsePpcError):
    """An iterative solver failed to reach its tolerance."""


class DesignError(SparsePpcError):
    """A controller design violates one of its own consistency checks."""


class ProtocolError(SparsePpcError):
    """A dropout pattern is incompatible with the buffering protocol."""


class ConfigError(SparsePpcError):
    """An experiment configuration failed validation."""


class SimulationRunError(SparsePpcError):
    """A Monte Carlo run failed.  Carries the run index and master seed so the
    offending run can be replayed in isolation."""

    def __init__(self, run_index: int, seed: int, cause: BaseException):
        super().__init__(
            f"run {run_index} failed (replay with master seed {seed}, "
            f"spawn key ({run_index},)): {cause}"
        )
        self.run_index = run_index
        self.seed = seed
        self.cause = cause
