"""Function-on-scalar group LASSO for sparse and dense functional responses."""

from .basis import BasisSpec, eval_basis, eval_matrix
from .design import DesignMatrix, build_dense_design, build_sparse_design
from .solver import Algorithm, CoefficientMatrix, FitResult, SolverConfig, fit
from .tuning import Criterion, fit_path, lambda_grid, screen, select

__version__ = "0.1.0"
