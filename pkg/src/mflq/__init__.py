"""Finite-horizon mean-field stochastic LQ control."""
from .moments import MomentTrajectory, exact_cost, optimal_value, propagate
from .oracle import (CapacityError, QuadraticForm, ScenarioTree, assemble, eval_policy_on_tree,
                     solve_open_loop, verify)
from .problem import (FeedbackPolicy, InitialCondition, ParseError, ProblemError, ProblemSpec,
                      ValidationError, ValidationReport, dump_problem, load_problem, validate)
from .riccati import (PrincipleSolution, RiccatiSolution, SolverError, optimal_policy,
                      solve_principle, solve_riccati)
from .simulate import NoiseModel, SimulationResult, simulate, simulate_particles

__version__ = "0.1.0"
