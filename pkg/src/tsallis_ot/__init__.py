"""Optimal transport regularised by the Tsallis relative entropy.

Solvers with certified duality gaps, exact transport, quantization and
coupling shadows, and a harness for the convergence rate of
``OT_{q,eps} - OT`` as ``eps -> 0``.
"""

__version__ = "0.1.0"

from .approx import data_processing_check, double_shadow, quantize, shadow
from .errors import NotConvergedWarning, NumericalError
from .exact_ot import solve_exact, wasserstein_p
from .measures import (
    Coupling,
    CostMatrix,
    DiscreteMeasure,
    StochasticKernel,
    build_cost,
    disintegrate,
    product_measure,
    push_kernel,
    uniform_grid,
    validate,
)
from .qcalc import QParam, f_q, f_q_star, phi_q, q_exp, q_log, tsallis_divergence
from .rates import (
    RateParams,
    constants_lower,
    constants_upper,
    kl_envelope,
    rate_sweep,
    sharpness_envelope,
    slope_fit,
    upper_envelope,
)
from .solver import SolveConfig, SolveReport, sinkhorn_kl, solve, solve_dual, solve_primal

__all__ = [
    "Coupling",
    "CostMatrix",
    "DiscreteMeasure",
    "NotConvergedWarning",
    "NumericalError",
    "QParam",
    "RateParams",
    "SolveConfig",
    "SolveReport",
    "StochasticKernel",
    "build_cost",
    "constants_lower",
    "constants_upper",
    "data_processing_check",
    "disintegrate",
    "double_shadow",
    "f_q",
    "f_q_star",
    "kl_envelope",
    "phi_q",
    "product_measure",
    "push_kernel",
    "q_exp",
    "q_log",
    "quantize",
    "rate_sweep",
    "shadow",
    "sharpness_envelope",
    "sinkhorn_kl",
    "slope_fit",
    "solve",
    "solve_dual",
    "solve_exact",
    "solve_primal",
    "tsallis_divergence",
    "uniform_grid",
    "upper_envelope",
    "validate",
    "wasserstein_p",
]
