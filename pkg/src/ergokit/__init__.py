"""Monte Carlo tools for coupling-based ergodicity checks of SDEs on R^d."""

from . import rng
from ._backend import NAME as BACKEND
from .config import ExperimentConfig, emit, load_config, parse_config
from .coupling import (CouplingRun, SyncReport, TailFit, coupled_chain_run, coupling_time_tail,
                       finite_chain_run, maximal_coupling_batch, maximal_coupling_discrete,
                       maximal_coupling_sample, meeting_survival_exact, synchronous_pair_batch)
from .ergodicity import (DriftFit, InvariantReport, TvCurve, continuity_probe, drift_fit,
                         explicit_bound_constant, fit_decay, invariant_agreement,
                         lyapunov_iterate_check, moment_bound_check, tv_curve, tv_curve_and_fit,
                         tv_gaussian_exact, tv_histogram)
from .errors import (ConfigurationError, DiagnosticError, EnvelopeError, ErgokitError,
                     EvaluationError, FitError, InputError, NumericError, ParseError,
                     SampleSizeError)
from .hypoellipticity import BracketChain, bn_chain, kalman_rank_oracle, rank_condition, rank_grid
from .integrate import PathBatch, euler_batch, exact_e1_batch
from .model import (LyapunovSpec, SdeModel, brownian, check_dissipativity, e1_lyapunov,
                    eval_drift, example_e1, jacobian, levy_dissipative, linear, ornstein_uhlenbeck,
                    polynomial_drift, quadratic_lyapunov)
from .noise import (LevyMeasureSpec, brownian_increments, orey_ratio, power_law_levy,
                    radial_table_levy, sample_jumps)

__version__ = "0.1.0"
