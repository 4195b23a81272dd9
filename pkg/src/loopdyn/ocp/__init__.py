"""Multiple-shooting trajectory optimization over constrained dynamics."""

from .statespace import EuclideanStateSpace, MechStateSpace
from .problem import MechStage, ShootingProblem, TerminalCost, Trajectory, StageModel
from .ddp import DdpSolver, SolverSettings, SolveReport, solve
from .tasks import build_task, load_task_config, initial_guess, state_activation
from . import costs
