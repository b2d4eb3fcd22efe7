"""mvselab: an interacting-particle laboratory for mean-field SDEs.

Simulates McKean-Vlasov-type dynamics with particle ensembles, evaluates
measure-dependent Lyapunov generators, audits stability certificates,
and turns path ensembles into moment-decay, ultimate-boundedness and
almost-sure-stability diagnostics.
"""

from .errors import (ConfigError, FitError, IntegrationError, ModelError,
                     MvselabError, NumericError, StructuralError, UsageError)
from .measure import (EmpiricalMeasure, TestDictionary, TestFunction,
                      default_test_dictionary, lambda2_norm_sq, raw_moment,
                      rho_lower_bound, wasserstein1)
from .model import (AssumptionSpec, ModelSpec, check_linear_growth,
                    check_monotone_nonlipschitz, contractive,
                    contractive_assumptions, eval_diffusion, eval_drift,
                    example61, example61_assumptions, kappa_interaction,
                    kappa_tilde, meanfield_ou, meanfield_ou_assumptions,
                    model_from_config, sample_audit_states)
from .lyapunov import (LyapunovSpec, StabilityCertificate, check_certificate,
                       eval_generator, integrated_generator_margin,
                       linear_combination, mean_centered, quad,
                       validate_derivatives)
from .simulate import (GaussianInit, PathEnsemble, PointInit, SimConfig,
                       load_ensemble, run_ensemble, save_ensemble, step)
from .oracle import OUParams, ou_moments
from .diagnostics import (CrossingReport, EnvelopeVerdict, ItoReport,
                          MomentCurve, StabilityReport, as_stability_report,
                          bound_check, crossing_count, ensemble_crossings,
                          fit_decay_rate, ito_consistency,
                          ito_consistency_online, lyapunov_curve,
                          moment_curve, supermartingale_check,
                          wilson_interval)

__version__ = "0.1.0"
