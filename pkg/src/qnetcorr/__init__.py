"""Unreliable Jackson networks: product-form laws, one-step correlations, orderings, gaps and variances."""

from .avar import avar_compare, avar_exact, avar_series, uniformize
from .correlation import corr_all, corr_direct, corr_formula, corr_split, diff_env, diff_routing
from .environment import EnvironmentSpec, env_chain, env_scale, kappa_scaling
from .errors import (ConfigParseError, NonErgodicError, PreconditionError, QNetError,
                     UnboundedObservableError, ValidationError)
from .model import NetworkModel, ReroutingSpec, ServiceRates, load_model, make_model, model_to_config
from .observable import Observable, parse_observable
from .ordering import pd_generator, pd_matrix, peskun_generator, peskun_matrix
from .routing import derive_rerouting, extended_xi, solve_traffic
from .sim import estimate, estimate_avar, estimate_lag, simulate
from .spectral import bd_comparison, gap_env, gap_truncated, symmetric_bounds
from .statespace import balance_residual, build_truncated, expectation, joint_pi, stationary_law

__version__ = "0.1.0"
