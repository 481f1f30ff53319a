from .core.kernels import KernelMatrix, KernelSpec, build_cross_kernel, build_kernel_matrix
from .core.solver_fixed_rank import FactorModel, FitConfig, ObservationSet, fit
from .core.convex_solvers import GammaModel, TraceFitConfig, fit_product_ridge, fit_trace_norm
from .core.grid import CVConfig, GridSpec, ResultTable
from .api.interface import run_cli
