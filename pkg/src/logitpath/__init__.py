"""Effect decomposition for recursive systems of binary logistic regressions.

Fit a system of logistic equations over (outcome, mediators, treatment,
covariates), then split the treatment's total effect on the outcome into
direct, indirect (global or path-specific) and residual parts, exactly, on
the log-odds or probability scale, with delta-method uncertainty and a
Monte Carlo harness for estimator comparison.
"""

from .dual import Dual, expit, softplus
from .model import (INTERCEPT, Column, ModelSpecError, ParameterSet,
                    SystemSpec, Term, ValidationReport, VariableSpec,
                    ZeroMask, linear_predictor, validate_system, zero_out)
from .fitting import (DataError, Dataset, EquationFit, FitError,
                      FittedSystem, fit_logistic, fit_system)
from .effects import (Decomposition, EffectError, EffectRequest,
                      average_probability_effects, decompose,
                      decompose_logodds, decompose_probability, deltas,
                      direct_mask, g_y, indirect_mask, marginal_logit)
from .multi import (PathSpec, decompose_multi, g_recursive,
                    marginal_logit_multi, marginalize_inner,
                    marginalize_outer, marginalize_outer_system, psie,
                    residual_structurally_zero)
from .inference import (EffectEstimate, EffectRow, EffectTable,
                        InferenceError, component_functional, delta_se,
                        effect_table, transform_fitted)
from .simulation import (MethodStats, SimConfig, SimResult, SimulationError,
                         generate_data, khb_ratio, pseudo_population,
                         results_to_csv, rsd_ratio, run_cell, run_study,
                         true_value)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
