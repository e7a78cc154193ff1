"""Optimal test spaces for piecewise-constant trial functions.

For P0 trial functions the optimal test space consists of the functions v
with ``B* v`` piecewise constant. In 1-D with ``mu = 0`` this means
``-(beta v)' = chi_{T_j}``, which integrates in closed form from the anchor
of the flow (the outflow end, or an interior stagnation node where the flow
converges). On flow-aligned triangulations the same space is the set of
element-wise linear functions that are continuous across faces crossed by
the flow and vanish on the outflow boundary; its basis is built by a sweep
against the flow.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import kernels
from .errors import (BetaVanishesInsideElement, InconsistentTrace, UnboundedTestFunction,
                     ValidationError)
from .mesh import FaceClass, classify_faces, flow_order
from .problem import TestNormKind, assemble_B, gram_matrix, make_grid, stability_constants
from .quadrature import TriGrid, map_triangle_rule, triangle_collapsed
from .spaces import DiscreteSpace, P1Conf2D, P1Cont1D

ZERO_TOL = 1e-12


# 1-D ---------------------------------------------------------------------------

def _flow_regions(mesh, beta, samples=16):
    """Split the mesh at nodes where beta vanishes; return per-element anchors.

    Each maximal run of elements where beta keeps one sign is a region. Its
    anchor is the downstream end; the upstream end must have beta != 0, or
    the test functions blow up there.
    """
    nodes = mesh.nodes
    bn = beta(nodes)
    scale = max(float(np.abs(bn).max()), 1e-300)
    t = (np.arange(samples) + 0.5) / samples
    inner = nodes[:-1, None] + t[None, :] * mesh.h[:, None]
    bi = beta(inner.ravel()).reshape(inner.shape)
    pos = np.all(bi > 0, axis=1)
    neg = np.all(bi < 0, axis=1)
    bad = np.flatnonzero(~(pos | neg))
    if bad.size:
        raise BetaVanishesInsideElement(
            f"beta changes sign or vanishes inside element {bad[0]}; put its zero on a node")
    sign = np.where(pos, 1, -1)
    zero_node = np.abs(bn) <= ZERO_TOL * scale
    region = np.zeros(mesh.n_elements, dtype=np.int64)
    region[1:] = np.cumsum(sign[1:] != sign[:-1])
    anchors = np.empty(mesh.n_elements)
    anchor_nodes = []
    for r in range(region[-1] + 1):
        els = np.flatnonzero(region == r)
        lo, hi = els[0], els[-1] + 1  # node indices of the region ends
        down, up = (hi, lo) if sign[els[0]] > 0 else (lo, hi)
        if zero_node[up]:
            raise UnboundedTestFunction(
                f"beta vanishes at the inflow end x = {nodes[up]:g} of a flow region; "
                "the optimal test functions are unbounded there")
        anchors[els] = nodes[down]
        anchor_nodes.append(down)
    return sign, anchors, sorted(set(anchor_nodes)), zero_node


class OptimalTest1D(DiscreteSpace):
    """The optimal test space of P0 for ``-(beta v)'`` on a 1-D mesh.

    ``basis="primal"`` uses ``v_j = F_j / beta`` with ``-(beta v_j)' = chi_{T_j}``
    (dense: each v_j fills its upstream region). ``basis="nodal"`` uses the
    local functions ``hat_i beta(x_i) / beta`` over the non-anchor nodes,
    which span the same space.
    """

    kind = "OptimalTest1D"
    degree = 8  # rational in beta: ask for a generous quadrature order

    def __init__(self, mesh, beta, dbeta=None, basis="nodal"):
        if basis not in ("primal", "nodal"):
            raise ValidationError("basis must be 'primal' or 'nodal'")
        if not callable(beta):
            value = float(beta)
            beta = lambda x, v=value: np.full(np.shape(x), v)  # noqa: E731
            dbeta = lambda x: np.zeros(np.shape(x))  # noqa: E731
        elif dbeta is None:
            raise ValidationError("callable beta needs its derivative dbeta")
        self.mesh = mesh
        self.beta = beta
        self.dbeta = dbeta
        self.basis = basis
        self.sign, self.anchors, self.anchor_nodes, self.zero_nodes = _flow_regions(mesh, beta)
        self._hats = P1Cont1D(mesh, vanish_at=[mesh.nodes[i] for i in self.anchor_nodes])
        self._node_beta = beta(self._hats.dof_coords())

    @property
    def ndof(self):
        return self.mesh.n_elements

    def _safe_inverse(self, b):
        out = np.zeros_like(b)
        nz = b != 0
        out[nz] = 1.0 / b[nz]
        return out

    def _primal_F(self, x):
        """F_j(x) (dense, len(x) x n): signed length of [x, anchor] inside T_j."""
        nodes = self.mesh.nodes
        xl, xr = nodes[:-1][None, :], nodes[1:][None, :]
        o = self.anchors[None, :]
        xx = x[:, None]
        lo, hi = np.minimum(xx, o), np.maximum(xx, o)
        overlap = np.clip(np.minimum(hi, xr) - np.maximum(lo, xl), 0.0, None)
        # points in another flow region see none of T_j
        e = self.mesh.locate(x)
        same = self.anchors[e][:, None] == o
        return np.where(same, np.sign(o - xx) * overlap, 0.0), same

    def eval(self, x, deriv=False):
        x = np.asarray(x, dtype=float).ravel()
        self._check_domain(x)
        b = self.beta(x)
        inv = self._safe_inverse(b)
        if self.basis == "primal":
            F, same = self._primal_F(x)
            if not deriv:
                return sp.csr_matrix(F * inv[:, None])
            e = self.mesh.locate(x)
            dF = -(np.arange(self.ndof)[None, :] == e[:, None]).astype(float) * same
            db = self.dbeta(x)
            return sp.csr_matrix((dF * b[:, None] - F * db[:, None]) * (inv**2)[:, None])
        H = self._hats.eval(x)
        scale = sp.diags(self._node_beta)
        if not deriv:
            return (sp.diags(inv) @ H @ scale).tocsr()
        dH = self._hats.eval(x, deriv=True)
        db = self.dbeta(x)
        return ((sp.diags(inv) @ dH - sp.diags(db * inv**2) @ H) @ scale).tocsr()

    def change_of_basis(self):
        """C with v_j = sum_i C[i, j] tilde-v_i (primal in terms of nodal)."""
        xs = self._hats.dof_coords()
        F, _ = self._primal_F(xs)
        # at an anchor-free node beta != 0 by construction
        return F / self._node_beta[:, None]


def optimal_basis_1d(mesh, beta, dbeta=None, basis="nodal"):
    return OptimalTest1D(mesh, beta, dbeta, basis)


def check_basis_1d(space, samples=5):
    """Max deviation of -(beta v_j)' from chi_{T_j} and of v_j at the anchors.

    Evaluates the primal basis at interior points of every element.
    """
    primal = space if space.basis == "primal" else OptimalTest1D(space.mesh, space.beta, space.dbeta, "primal")
    m = primal.mesh
    t = (np.arange(samples) + 0.5) / samples
    x = (m.nodes[:-1, None] + t[None, :] * m.h[:, None]).ravel()
    e = np.repeat(np.arange(m.n_elements), samples)
    V = primal.eval(x).toarray()
    D = primal.eval(x, deriv=True).toarray()
    adj = -(primal.dbeta(x)[:, None] * V + primal.beta(x)[:, None] * D)
    chi = (np.arange(primal.ndof)[None, :] == e[:, None]).astype(float)
    dev = float(np.abs(adj - chi).max())
    # value at each anchor, approached from inside its region
    anchor_dev = 0.0
    for j in primal.anchor_nodes:
        xa = m.nodes[j]
        for side in (-1, 1):
            xs = xa + side * 1e-14 * (m.b - m.a)
            if m.a <= xs <= m.b and not primal.zero_nodes[j]:
                anchor_dev = max(anchor_dev, float(np.abs(primal.eval(np.array([xs])).toarray()).max()))
    return {"adjoint_deviation": dev, "anchor_value": anchor_dev}


# 2-D ---------------------------------------------------------------------------

class P1ConfBasis2D(P1Conf2D):
    """Basis phi_T of the optimal test space on a flow-aligned mesh.

    ``phi_T`` lives on T and the chain of elements upstream of T, which the
    flow reaches T through.
    """

    def __init__(self, mesh, indptr, elems, vals, order):
        super().__init__(mesh, indptr, elems, vals)
        self.flow = order

    def check_invariants(self):
        """Max violation of continuity, outflow trace and the adjoint identity."""
        m = self.mesh
        tris = m.triangles
        sign = m.elem_flux_sign
        fin, fout, _ = kernels.face_roles(sign)
        heads = self.indptr[:-1]
        is_head = np.zeros(self.elems.size, dtype=bool)
        is_head[heads] = True
        # beta_K . grad phi_T = -[K = T]
        slope = np.einsum("ij,ij->i", self._grads, m.element_beta[self.elems])
        adjoint = float(np.abs(slope + is_head).max())
        # continuity with the element downstream of each non-head entry
        idx = np.flatnonzero(~is_head)
        k = self.elems[idx]
        d = self.elems[idx - 1]
        cont = 0.0
        for s in (1, 2):
            loc = (fout[k] + s) % 3
            gid = tris[k, loc]
            match = tris[d] == gid[:, None]
            if not np.all(match.any(axis=1)):
                raise InconsistentTrace("chain elements do not share their crossing face")
            dv = self.vals[idx - 1][match]
            cont = max(cont, float(np.abs(self.vals[idx, loc] - dv).max(initial=0.0)))
        # heads: zero on their outflow face (boundary or downstream neighbour)
        k = self.elems[heads]
        outflow = 0.0
        for s in (1, 2):
            loc = (fout[k] + s) % 3
            outflow = max(outflow, float(np.abs(self.vals[heads, loc]).max(initial=0.0)))
        return {"continuity": cont, "outflow_trace": outflow, "adjoint": adjoint}


def build_p1conf_basis(mesh, tol=1e-10):
    """Sweep against the flow to build phi_T for every triangle T."""
    fo = flow_order(mesh)
    sign = mesh.elem_flux_sign
    indptr, elems, vals = kernels.p1conf_sweep(fo.order, fo.upstream, mesh.triangles,
                                               mesh.vertices, mesh.element_beta, sign)
    basis = P1ConfBasis2D(mesh, indptr, elems, vals, fo)
    slope = np.einsum("ij,ij->i", basis.piece_gradients(), mesh.element_beta[elems])
    target = np.zeros(elems.size)
    target[indptr[:-1]] = -1.0
    worst = float(np.abs(slope - target).max(initial=0.0))
    if worst > tol:
        raise InconsistentTrace(
            f"outflow traces and the flow derivative disagree by {worst:.3e}; mesh is not flow-aligned")
    return basis


def dump_basis_csv(space, path):
    """Write one row per (basis function, element) piece with its vertex values."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(space, P1Conf2D):
            w.writerow(["basis", "element", "v0", "v1", "v2"])
            for t in range(space.ndof):
                els, vals = space.element_values(t)
                for k, v in zip(els, vals):
                    w.writerow([t, int(k)] + [repr(float(c)) for c in v])
            return
        w.writerow(["basis", "element", "x_left", "value_left", "x_right", "value_right"])
        m = space.mesh
        eps = 1e-12 * (m.b - m.a)
        xl = m.nodes[:-1] + eps
        xr = m.nodes[1:] - eps
        VL = space.eval(xl).toarray()
        VR = space.eval(xr).toarray()
        for j in range(space.ndof):
            for e in range(m.n_elements):
                if VL[e, j] != 0 or VR[e, j] != 0:
                    w.writerow([j, e, repr(float(m.nodes[e])), repr(float(VL[e, j])),
                                repr(float(m.nodes[e + 1])), repr(float(VR[e, j]))])


# compatibility -------------------------------------------------------------------

@dataclass
class CompatibilityReport:
    inf_sup: float
    gamma_B: float | None
    passed: bool | None
    singular: bool
    skipped_dofs: list = field(default_factory=list)
    degenerate_test_dofs: list = field(default_factory=list)
    eigenvalues: np.ndarray = field(default=None, repr=False)

    def lines(self):
        g = "n/a" if self.gamma_B is None else f"{self.gamma_B:.6g}"
        out = [f"inf-sup {self.inf_sup:.6g}", f"gamma_B {g}"]
        if self.passed is not None:
            out.append("inf-sup >= 0.95 gamma_B: " + ("yes" if self.passed else "NO"))
        if self.singular:
            out.append("pair is singular")
        if self.skipped_dofs:
            out.append(f"skipped trial dofs {self.skipped_dofs}")
        if self.degenerate_test_dofs:
            out.append(f"test dofs annihilated by B: {self.degenerate_test_dofs}")
        return out


def verify_compatibility(trial, test, problem, grid=None, norm=TestNormKind.ADJOINT_GRAPH,
                         singular_tol=1e-8):
    """Discrete inf-sup constant of (trial, test) at q = 2.

    Solves the generalized eigenproblem ``B^T G^{-1} B x = lam M x`` with G
    the test Gram matrix and M the trial L^2 mass matrix; the inf-sup value is
    ``sqrt(lam_min)``. Trial dofs whose column of B vanishes are skipped;
    test dofs whose row vanishes (b(w, psi) = 0 for every trial w) are listed.
    """
    grid = grid if grid is not None else make_grid(problem, trial, test)
    B = assemble_B(problem, trial, test, grid, check=False).B_matrix.toarray()
    G = gram_matrix(problem, test, norm, 2.0, grid, check=False).toarray()
    val = trial.tabulate(grid)[0]
    M = (val.T @ sp.diags(grid.weights) @ val).toarray()
    colnorm = np.abs(B).max(axis=0)
    keep = colnorm > 1e-14 * max(float(colnorm.max(initial=0.0)), 1e-300)
    skipped = [int(i) for i in np.flatnonzero(~keep)]
    rownorm = np.abs(B).max(axis=1)
    dead = [int(j) for j in np.flatnonzero(rownorm <= 1e-12 * max(float(rownorm.max(initial=0.0)), 1e-300))]
    B, M = B[:, keep], M[np.ix_(keep, keep)]
    cho = sla.cho_factor(G)
    S = B.T @ sla.cho_solve(cho, B)
    S = 0.5 * (S + S.T)
    lam = sla.eigh(S, M, eigvals_only=True)
    lam_min = max(float(lam[0]), 0.0)
    inf_sup = float(np.sqrt(lam_min))
    scale = float(np.sqrt(max(lam[-1], 1e-300)))
    singular = inf_sup <= singular_tol * scale
    try:
        gamma = stability_constants(problem)[0]
    except ValidationError:
        gamma = None
    passed = None if gamma is None else inf_sup >= 0.95 * gamma
    return CompatibilityReport(inf_sup, gamma, passed, singular, skipped, dead, lam)


def assert_compatible(report):
    if report.passed is False:
        raise AssertionError(f"inf-sup {report.inf_sup:.6g} is below 0.95 gamma_B = {0.95 * report.gamma_B:.6g}")
    return report


# characteristics on flow-aligned meshes ----------------------------------------

def characteristic_maps(mesh):
    """Affine maps (nt, 2, 3) from each element to the inflow boundary along the flow."""
    fo = flow_order(mesh)
    return kernels.backtrace_maps(fo.order, fo.upstream, mesh.triangles, mesh.vertices,
                                  mesh.element_beta, mesh.elem_flux_sign)


def trace_to_inflow(maps, points, elems):
    """Foot on the inflow boundary of the characteristic through each point."""
    A = maps[elems]
    return np.einsum("kij,kj->ki", A[:, :, :2], points) + A[:, :, 2]


def traced_solution(mesh, g, maps=None):
    """Exact solution of beta.grad u = 0 with u = g(x, y) on the inflow boundary.

    Returns a callable ``u(points, elems)``.
    """
    maps = characteristic_maps(mesh) if maps is None else maps

    def u(points, elems):
        foot = trace_to_inflow(maps, np.asarray(points, dtype=float), np.asarray(elems))
        return np.asarray(g(foot[:, 0], foot[:, 1]), dtype=float)

    return u


def _cut_pieces(v, d):
    """Sub-triangles of a triangle with vertices v cut by the zero line of linear d."""
    s = np.sign(d)
    if not ((s > 0).any() and (s < 0).any()):
        return [v]
    zero = np.flatnonzero(s == 0)
    if zero.size == 1:
        i = zero[0]
        j, k = (i + 1) % 3, (i + 2) % 3
        p = v[j] + d[j] / (d[j] - d[k]) * (v[k] - v[j])
        return [np.array([v[i], v[j], p]), np.array([v[i], p, v[k]])]
    # the vertex whose sign differs from the other two
    i = next(i for i in range(3) if s[i] != s[(i + 1) % 3] and s[i] != s[(i + 2) % 3])
    j, k = (i + 1) % 3, (i + 2) % 3
    p = v[i] + d[i] / (d[i] - d[j]) * (v[j] - v[i])
    q = v[i] + d[i] / (d[i] - d[k]) * (v[k] - v[i])
    return [np.array([v[i], p, q]), np.array([p, v[j], v[k]]), np.array([p, v[k], q])]


def split_grid(mesh, maps=None, level=None, component=0, n=6):
    """Quadrature grid whose cells do not straddle the traced line foot[component] = level.

    Without ``level`` this is the collapsed n x n rule on every triangle.
    """
    ref_pts, ref_wts = triangle_collapsed(n)
    verts = mesh.element_vertices()
    if level is None:
        pts, wts = map_triangle_rule(verts, ref_pts, ref_wts)
        return TriGrid(pts.reshape(-1, 2), wts.ravel(), np.repeat(np.arange(mesh.n_elements), wts.shape[1]))
    maps = characteristic_maps(mesh) if maps is None else maps
    pieces, owner = [], []
    for k in range(mesh.n_elements):
        a = maps[k, component]
        d = verts[k] @ a[:2] + a[2] - level
        scale = max(float(np.abs(d).max()), 1e-300)
        d = np.where(np.abs(d) <= 1e-13 * scale, 0.0, d)
        for piece in _cut_pieces(verts[k], d):
            pieces.append(piece)
            owner.append(k)
    pieces = np.array(pieces)
    pts, wts = map_triangle_rule(pieces, ref_pts, ref_wts)
    nq = wts.shape[1]
    return TriGrid(pts.reshape(-1, 2), wts.ravel(), np.repeat(np.array(owner, dtype=np.int64), nq))


def inflow_faces(mesh):
    tags = classify_faces(mesh)
    return np.flatnonzero(tags == FaceClass.INFLOW)


def p0_cell_averages(u, grid, n_elements):
    """Element averages of ``u(points, elems)`` from a quadrature grid."""
    vals = u(grid.points, grid.elem)
    num = np.bincount(grid.elem, grid.weights * vals, minlength=n_elements)
    den = np.bincount(grid.elem, grid.weights, minlength=n_elements)
    return num / den


__all__ = [
    "OptimalTest1D", "optimal_basis_1d", "check_basis_1d", "P1ConfBasis2D", "build_p1conf_basis",
    "dump_basis_csv", "CompatibilityReport", "verify_compatibility", "assert_compatible",
    "characteristic_maps", "trace_to_inflow", "traced_solution", "split_grid", "p0_cell_averages",
]
