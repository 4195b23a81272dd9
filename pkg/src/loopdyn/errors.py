"""Exception types shared across the package."""


class LoopdynError(Exception):
    """Base class for all package errors."""


class ModelError(LoopdynError):
    """Malformed model document or inconsistent mechanism definition."""


class SingularRetractionError(LoopdynError):
    """Log map evaluated too close to the rotation-angle pi singularity."""


class ProjectionError(LoopdynError):
    """Constraint projection failed to converge."""


class RankDeficiencyError(LoopdynError):
    """KKT system stayed singular after proximal escalation."""

    def __init__(self, message, constraint_name=None):
        super().__init__(message)
        self.constraint_name = constraint_name


class StaleSolutionError(LoopdynError):
    """A KKT solution was reused at a state it was not computed for."""
