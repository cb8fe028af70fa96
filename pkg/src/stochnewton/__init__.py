"""Stochastic semismooth Newton solver for l1-regularized finite-sum problems.

The package is organized around a small set of layers:

- ``datakit``: sparse datasets (LIBSVM text format, synthetic generators, scaling)
- ``model``: smooth finite-sum losses plus the l1 term, evaluated per index subset
- ``prox``: soft-thresholding, natural residuals, generalized Jacobian masks
- ``oracles``: sub-sampled / variance-reduced gradient and Hessian oracles with
  sample-size schedules
- ``newton``: reduced semismooth Newton systems solved by early-terminated
  Krylov iterations
- ``driver``: the globalized hybrid loop (Newton steps guarded by growth
  conditions, proximal-gradient fallback)
- ``baselines``: Adagrad and prox-SVRG reference methods
- ``diagnostics``: executable checks of the supporting inequalities
- ``cli``: experiment runner writing trace CSVs, summaries and figures
"""

from stochnewton.datakit import SparseDataset, load_libsvm, scale_features, synth_binary
from stochnewton.model import CompositeProblem, loss_value, loss_grad, loss_hess_vec, objective
from stochnewton.prox import ProxMetric, JacobianMask, prox_l1, residual, jacobian_mask, scaled_norm
from stochnewton.oracles import OracleState, ScheduleParams
from stochnewton.newton import NewtonConfig, newton_step, adaptive_policy, krylov_solve
from stochnewton.driver import S4NConfig, SolverState, Trace, TraceRecord, s4n_run, s2nd_run
from stochnewton.baselines import AdagradConfig, AdagradState, ProxSVRGConfig, adagrad_run, proxsvrg_run

__version__ = "0.1.0"

__all__ = [
    "SparseDataset", "load_libsvm", "scale_features", "synth_binary",
    "CompositeProblem", "loss_value", "loss_grad", "loss_hess_vec", "objective",
    "ProxMetric", "JacobianMask", "prox_l1", "residual", "jacobian_mask", "scaled_norm",
    "OracleState", "ScheduleParams",
    "NewtonConfig", "newton_step", "adaptive_policy", "krylov_solve",
    "S4NConfig", "SolverState", "Trace", "TraceRecord", "s4n_run", "s2nd_run",
    "AdagradConfig", "AdagradState", "ProxSVRGConfig", "adagrad_run", "proxsvrg_run",
]
