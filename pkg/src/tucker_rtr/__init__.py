"""Riemannian trust-region completion of tensors with fixed multilinear rank.

Tensors are plain ``numpy`` arrays.  Matricization follows the column
ordering in which the earliest remaining mode varies fastest, modes are
0-based, and sampled entries are held in :class:`SampledTensor`.  Points on
the manifold are :class:`TuckerTensor` objects with orthonormal factors and
tangent vectors are :class:`TangentVector` objects in gauged form.
"""

from ._kernels import get_backend, set_backend, use_backend
from .manifold import (TangentVector, curvature_term, hessian_exact, hessian_fd,
                       hessian_gauss_newton, project_to_tangent, retract, riemannian_gradient,
                       tangent_basis, tangent_to_ambient, vector_transport, weingarten_dproj)
from .solver import (LineSearchError, SolverConfig, SolverTrace, cost, model_error, model_eval,
                     nonlinear_cg_solve, steepest_descent_solve, tcg_solve, trust_region_solve)
from .tensor import (RankDeficiencyError, SampledTensor, inner, matricize, mode_product,
                     multilinear_rank, norm, sample_project, tensorize)
from .tucker import (TuckerTensor, hosvd, manifold_dimension, orthonormalize, random_tucker,
                     sampled_entries, singular_spectrum, to_full)

__version__ = "0.1.0"

__all__ = [
    "LineSearchError",
    "RankDeficiencyError",
    "SampledTensor",
    "SolverConfig",
    "SolverTrace",
    "TangentVector",
    "TuckerTensor",
    "cost",
    "curvature_term",
    "get_backend",
    "hessian_exact",
    "hessian_fd",
    "hessian_gauss_newton",
    "hosvd",
    "inner",
    "manifold_dimension",
    "matricize",
    "mode_product",
    "model_error",
    "model_eval",
    "multilinear_rank",
    "nonlinear_cg_solve",
    "norm",
    "orthonormalize",
    "project_to_tangent",
    "random_tucker",
    "retract",
    "riemannian_gradient",
    "sample_project",
    "sampled_entries",
    "set_backend",
    "singular_spectrum",
    "steepest_descent_solve",
    "tangent_basis",
    "tangent_to_ambient",
    "tcg_solve",
    "tensorize",
    "to_full",
    "trust_region_solve",
    "use_backend",
    "vector_transport",
    "weingarten_dproj",
]
