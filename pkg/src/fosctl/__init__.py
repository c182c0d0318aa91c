"""Finite-window feedback control of linear discrete-time fractional-order systems."""
from .errors import (DimensionMismatch, FosError, InfeasibleUpTo, KappaInfeasible, NotStabilizable,
                     NumericOverflow, OptimizerStalled, SingularAggregateMatrix, UnstableClosedLoop)
from .frac_core import CoeffTable, FracOrder, coeff_table, gl_coefficient, phi_tail
from .fos_model import (FosModel, ReformCoeffs, Trajectory, example_model, reform_coeffs,
                        simulate_exact, validate_model)
from .v_approx import VApprox, build_v_approx, residual
from .synthesis import (AnalysisParams, SynthesisResult, compute_constants, compute_psi,
                        compute_tracking_bound_d, find_min_v, refine_gain, scan_v, solve_dlyap,
                        synthesize, synthesize_gain)
from .sim_engine import (Scenario, make_disturbance, run, run_regulation, run_track_fos,
                         run_track_vapprox)
from .mpc_ref import MpcConfig, MpcReference, mpc_step, solve_open_loop, stage_cost

__version__ = "0.1.0"
