"""Problem data of the reproduced studies."""
import numpy as np

from ..mesh import flow_aligned_strip_mesh, red_refine_2d
from ..problem import AdvectionReactionProblem

JUMP_AT = np.sqrt(2.0) / 2.0
SINGULAR_AT = 1.0 / 12.0
JUMP_2D_AT = 1.0 / 3.0


def sign_jump(x):
    return np.sign(np.asarray(x, dtype=float) - JUMP_AT)


def jump_problem(p=2.0):
    """beta = 1, mu = 0 on (0, 1) with u = sign(x - sqrt(2)/2)."""
    return AdvectionReactionProblem((0.0, 1.0), p=p, beta=1.0, mu=0.0,
                                    diracs=[(JUMP_AT, 2.0)], g_inflow={0.0: -1.0},
                                    name="jump")


def gibbs_problem(p):
    """u = sign(x) on (-1, 1): u' = 2 delta_0 with u(-1) = -1."""
    return AdvectionReactionProblem((-1.0, 1.0), p=p, beta=1.0, mu=0.0,
                                    diracs=[(0.0, 2.0)], g_inflow={-1.0: -1.0},
                                    omega_filling=True, name="gibbs")


def singular_exact(x):
    # 12 |x - 1/12| keeps the rounding of 1 - 12x away from zero near the pole
    return (12.0 * np.abs(np.asarray(x, dtype=float) - SINGULAR_AT)) ** (-1.0 / 3.0)


def singular_problem(p=2.0):
    """beta = 1 - 12x, mu = -4: inflow at both ends, u = |1 - 12x|^(-1/3)."""
    return AdvectionReactionProblem(
        (0.0, 1.0), p=p, beta=lambda x: 1.0 - 12.0 * x, dbeta=lambda x: np.full(np.shape(x), -12.0),
        mu=-4.0, g_inflow={0.0: 1.0, 1.0: 11.0 ** (-1.0 / 3.0)}, omega_filling=True,
        name="singular")


def smooth_problem(p=2.0):
    """beta = 2 - x, mu = 0 with u = 1 + 2x."""
    return AdvectionReactionProblem(
        (0.0, 1.0), p=p, beta=lambda x: 2.0 - x, dbeta=lambda x: -np.ones(np.shape(x)),
        mu=0.0, f_source=lambda x: 4.0 - 2.0 * x, g_inflow={0.0: 1.0}, name="smooth")


def inflow_smooth(x, y):
    return np.sin(np.pi * x)


def inflow_jump(x, y):
    return np.sin(np.pi * x) * np.sign(x - JUMP_2D_AT)


def strip_meshes(levels, ncols=4, nrows=4, seed=0):
    """Initial flow-aligned strip mesh and its red refinements (levels meshes in total)."""
    m = flow_aligned_strip_mesh(ncols, nrows, seed=seed)
    out = [m]
    for _ in range(levels - 1):
        m = red_refine_2d(m)
        out.append(m)
    return out


def advect2d_problem(mesh, jump, p=2.0):
    return AdvectionReactionProblem(mesh, p=p, mu=0.0,
                                    g_inflow=inflow_jump if jump else inflow_smooth,
                                    g_breaks=[(JUMP_2D_AT, 0.0)] if jump else (),
                                    omega_filling=True,
                                    name="advect2d_jump" if jump else "advect2d_smooth")


def mesh_size(mesh):
    """Longest triangle edge."""
    v = mesh.element_vertices()
    e = np.linalg.norm(v - np.roll(v, 1, axis=1), axis=2)
    return float(e.max())
