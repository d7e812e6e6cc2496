"""Distributed dual averaging over random gossip networks, with asymptotic diagnostics."""

from .algorithms import DdaState, StepSizeSchedule, Trajectory, dda_run, dpg_run, error_decomposition, schedule_value
from .analysis import AsymptoticModel, CovarianceReport, build_asymptotic_model, identification_time, monte_carlo, rate_probe
from .config import ExperimentConfig, estimation_config
from .linalg import lyapunov_solve, null_space_basis, projection_matrix, pseudo_inverse, spectral_norm
from .network import GossipScheme, broadcast_gossip, fixed_scheme, mixing_report, pairwise_gossip
from .polyhedron import Polyhedron, ProjectionResult, triangle_polyhedron
from .problem import QuadraticEstimationProblem, generate_instance, estimation_problem

__version__ = "0.1.0"
