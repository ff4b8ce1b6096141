"""Rare event probability estimation via consensus-driven adaptive importance sampling.

The main entry points are :func:`run_cbree` / :func:`run_cbree_vmfn` for the
adaptive particle method, :func:`run_enkf` for the ensemble Kalman baseline,
:func:`get_problem` for the benchmark registry and :func:`run_benchmark` for
repeated seeded comparisons against crude Monte Carlo.
"""

from .bench import BenchmarkResult, McConfig, rel_eff, run_benchmark, run_mc
from .cbs import Ensemble, cbs_step, ensemble_coefficients, ess, solve_beta
from .densities import (
    GaussianModel,
    VmfnModel,
    gaussian_fit,
    gaussian_logpdf,
    gaussian_sample,
    std_normal_logpdf,
    vmfn_fit,
    vmfn_logpdf,
    vmfn_sample,
)
from .driver import CbreeConfig, RunRecord, run_cbree, run_cbree_vmfn
from .enkf import EnkfConfig, enkf_step, run_enkf
from .numkit import RandomStream
from .problems import ProblemSpec, get_problem, list_problems
from .smoothing import empirical_cv, smooth_indicator, update_smoothing

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "CbreeConfig",
    "EnkfConfig",
    "Ensemble",
    "GaussianModel",
    "McConfig",
    "ProblemSpec",
    "RandomStream",
    "RunRecord",
    "VmfnModel",
    "cbs_step",
    "empirical_cv",
    "ensemble_coefficients",
    "ess",
    "gaussian_fit",
    "gaussian_logpdf",
    "gaussian_sample",
    "get_problem",
    "list_problems",
    "rel_eff",
    "run_benchmark",
    "run_cbree",
    "run_cbree_vmfn",
    "run_enkf",
    "run_mc",
    "enkf_step",
    "smooth_indicator",
    "solve_beta",
    "std_normal_logpdf",
    "update_smoothing",
    "vmfn_fit",
    "vmfn_logpdf",
    "vmfn_sample",
    "__version__",
]
