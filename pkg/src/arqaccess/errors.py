"""Exception types raised across the package."""


class ArqAccessError(Exception):
    """Base class for all package errors."""


class ConstructionError(ArqAccessError, ValueError):
    """An object was built from invalid or inconsistent parameters."""


class PreconditionError(ArqAccessError, ValueError):
    """An operation was called outside its domain of validity."""


class DegenerateObservationError(ArqAccessError, ValueError):
    """An observation has zero likelihood under the current belief or model."""


class SolverError(ArqAccessError, RuntimeError):
    """Value iteration failed to converge."""


class InvariantViolation(ArqAccessError, RuntimeError):
    """A structural property that must hold was found broken."""


class StateError(ArqAccessError, RuntimeError):
    """A policy handle was used in an inconsistent state."""
