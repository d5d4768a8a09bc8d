"""Distributed compressive spectrum sensing with joint sparsity."""
from .channel import (BlockCirculant, ChannelRealization, DestructiveFilter, apply_channel,
                      build_bbar, channel_aware_operator, estimate_filters, random_filters)
from .common import (CommonEstimate, common_eq9_closed, common_eq10_closed,
                     common_via_solver)
from .harness import ExperimentResult, GridConfig, emit_csv, load_config, metrics, run_experiment
from .jsm import (SensingMatrix, StackedSystem, assemble_gbar, assemble_stacked,
                  draw_sensing_matrix, innovation_rhs, measure)
from .operators import OperatorSet, autocorr_of, build_operators, edge_of, psd_of
from .reconstruction import (ReconReport, recon_individual, recon_innovation,
                             recon_innovation_channel_aware, recon_jsm)
from .scenario import GenerationError, GroupScenario, generate_group
from .solvers import (BpdnProblem, EqualityL1Problem, LambdaRule, SolverConfig, SolverReport,
                      solve_bpdn, solve_circulant_ls, solve_equality_l1)

__version__ = "0.1.0"
