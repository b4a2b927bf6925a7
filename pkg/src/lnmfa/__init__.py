"""Mixtures of logistic normal multinomial factor analyzers for compositional counts."""

from .aecm import FitConfig, FitResult, InitSpec, fit_aecm
from .compositional import CountMatrix, DomainError, alr, alr_inv, replace_zeros
from .criteria import aitken_converged, ari, bic, count_params, free_params
from .elbo import FactorSite, VariationalSite, elbo_cycle1, elbo_cycle1_grad, elbo_cycle2
from .errors import DegenerateComponentError, FitFailure, NumericError
from .mixture import MODEL_CODES, ComponentParams, ModelConstraint, woodbury_inverse
from .selection import GridSpec, SelectionReport, grid_search
from .simulate import SimOutput, SimSpec, builtin_specs, generate
from .varinf import NewtonConfig, update_factor_site, update_site

__version__ = "0.1.0"
