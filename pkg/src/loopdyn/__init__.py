"""Closed-loop multibody dynamics, analytical derivatives, and whole-body OCP."""

from .errors import (
    LoopdynError,
    ModelError,
    SingularRetractionError,
    ProjectionError,
    RankDeficiencyError,
    StaleSolutionError,
)

__version__ = "0.1.0"
