"""Sharp small-time exit asymptotics for diffusion bridges.

Library + CLI computing estimates q(t) ~ c e^{-u/t} for the
probability that a diffusion bridge leaves a half space as the
conditioning time t shrinks, with closed-form oracles for linear
models and Monte Carlo validation of the predictions.
"""

from .errors import (ConfigError, ConjugatePointError, EvaluationError,
                     NumericsError, RsrError, SharpBridgeError)
from .model import (BridgeProblem, DiffusionModel, EllipticityReport,
                    HalfSpaceDomain, brownian, default_probes,
                    diffusion_matrix, ellipticity_check, ornstein_uhlenbeck,
                    scalar_sigma)
from .geometry import (GeodesicResult, exp_map, geodesic_bvp, path_length,
                       van_vleck_H, work_integral_A)
from .expansion import (DriftExpansion, build_expansion, first_order_drift,
                        gradient_field_check, limit_drift, ou_expansion)
from .ou import OuSolution, gram_matrix, gram_small_t, ou_halfspace_solution, ou_log_density_grad
from .hj import (Characteristic, SharpEstimate, characteristic_solve,
                 pde_residuals, sharp_estimate, u_halfspace_closed,
                 u_variational, w_integral)
from .mc import (ExtrapolationResult, McConfig, McEstimate, exit_probability,
                 extrapolate, fit_rate_prefactor, sample_bridge_path,
                 sample_bridge_paths, unconditioned_exit_probability)

__version__ = "0.1.0"

__all__ = [
    "BridgeProblem", "Characteristic", "ConfigError", "ConjugatePointError",
    "DiffusionModel", "DriftExpansion", "EllipticityReport",
    "EvaluationError", "ExtrapolationResult", "GeodesicResult",
    "HalfSpaceDomain", "McConfig", "McEstimate", "NumericsError",
    "OuSolution", "RsrError", "SharpBridgeError", "SharpEstimate",
    "brownian", "build_expansion", "characteristic_solve", "default_probes",
    "diffusion_matrix", "ellipticity_check", "exit_probability", "exp_map",
    "extrapolate", "first_order_drift", "fit_rate_prefactor",
    "geodesic_bvp", "gradient_field_check", "gram_matrix", "gram_small_t",
    "limit_drift", "ornstein_uhlenbeck", "ou_expansion",
    "ou_halfspace_solution", "ou_log_density_grad", "path_length",
    "pde_residuals", "sample_bridge_path", "sample_bridge_paths",
    "scalar_sigma", "sharp_estimate", "u_halfspace_closed", "u_variational",
    "unconditioned_exit_probability", "van_vleck_H", "w_integral",
]
