"""Discrete-dual minimal-residual finite elements for advection-reaction in L^p."""
from .errors import *  # noqa: F401,F403
from .mesh import (FaceClass, Mesh1D, TriMesh2D, classify_faces, flow_aligned_strip_mesh,
                   flow_order, read_mesh, red_refine_2d, refine_uniform_1d, uniform_mesh_1d,
                   write_mesh)
from .spaces import (FortinOperator1D, P0Space, P1Conf2D, P1Cont1D, PkCont1D, RefinedP1,
                     fortin_apply)
from .problem import (AdvectionReactionProblem, TestNormKind, assemble, assemble_B,
                      assemble_rhs, gram_matrix, stability_constants)
from .duality import DualityMapConfig, TestNorm, build_test_norm, jq_value, lq_norm
from .solver import (MixedSolution, SolverConfig, best_lp_approximation, dual_norm,
                     error_norm, solve_mixed, solve_petrov_galerkin)
from .optimal_test import (OptimalTest1D, P1ConfBasis2D, build_p1conf_basis,
                           optimal_basis_1d, traced_solution, verify_compatibility)
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
