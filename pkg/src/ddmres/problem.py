"""Advection-reaction problem data and assembly of the weak form.

The weak operator is ``b(w, v) = int w (mu v - div(beta v))`` and the load is
``<f, v> = int f0 v + sum_k w_k v(x_k) + int_{inflow} |beta.n| g v``.
Assembled matrices are stored test-by-trial: ``B[j, i] = b(trial_i, test_j)``.
"""
import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (AssumptionUnavailable, AssumptionViolated,
                     NonconformingTestSpace, SingularGram, ValidationError)
from .mesh import FaceClass, TriMesh2D, classify_faces
from .quadrature import (TriGrid, gauss_legendre, grid_1d, map_rule,
                         map_triangle_rule, triangle_rule)

Coefficient = Union[float, Callable[[np.ndarray], np.ndarray]]

DENSE_THRESHOLD = 2000


class TestNormKind(enum.Enum):
    DERIVATIVE_ONLY = "derivative"  # ||v'||_q, 1-D only
    ADJOINT_GRAPH = "graph"  # (||v||_q^2 + ||div(beta v)||_q^2)^(1/2)


def _as_callable(c):
    if callable(c):
        return c
    value = float(c)
    return lambda x: np.full(np.shape(x)[:1] if np.ndim(x) > 1 else np.shape(x), value)


@dataclass
class AdvectionReactionProblem:
    """beta . grad u + mu u = f0 in the domain, u = g on the inflow boundary.

    In 1-D ``domain`` is an interval (a, b), ``beta`` a constant or callable
    and ``dbeta`` its derivative (required for callable beta). In 2-D
    ``domain`` is a :class:`TriMesh2D` and beta is read from the mesh.
    ``g_inflow`` is evaluated only on inflow boundary points; in 1-D it may
    also be a ``{endpoint: value}`` mapping. ``diracs`` are 1-D point sources
    ``(location, weight)``. ``g_breaks`` lists 2-D boundary points where
    ``g_inflow`` jumps; inflow faces are split there before integration.
    """

    domain: Union[Tuple[float, float], TriMesh2D]
    p: float = 2.0
    beta: Optional[Coefficient] = None
    dbeta: Optional[Coefficient] = None
    mu: Coefficient = 0.0
    f_source: Optional[Callable] = None
    diracs: Sequence[Tuple[float, float]] = ()
    g_inflow: Optional[Union[Callable, dict]] = None
    omega_filling: bool = False
    name: str = ""
    g_breaks: Sequence = ()
    _mu0: Optional[float] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not 1.0 < self.p < np.inf:
            raise ValidationError(f"trial exponent p must lie in (1, inf), got {self.p}")
        if self.dim == 1:
            a, b = self.domain
            if not a < b:
                raise ValidationError("1-D domain needs a < b")
            if self.beta is None:
                raise ValidationError("1-D problems need beta")
            if callable(self.beta) and self.dbeta is None:
                raise ValidationError("callable beta needs its derivative dbeta")
            if self.dbeta is None:
                self.dbeta = 0.0
        self.diracs = tuple((float(x), float(w)) for x, w in self.diracs)

    @property
    def dim(self):
        return 2 if isinstance(self.domain, TriMesh2D) else 1

    @property
    def q(self):
        return self.p / (self.p - 1.0)

    @property
    def mesh2d(self):
        return self.domain if self.dim == 2 else None

    def with_p(self, p):
        """Copy with another trial exponent."""
        kw = {k: getattr(self, k) for k in ("domain", "beta", "dbeta", "mu", "f_source",
                                            "diracs", "g_inflow", "omega_filling", "name", "g_breaks")}
        return AdvectionReactionProblem(p=p, **kw)

    # coefficient evaluation -------------------------------------------------
    def beta_at(self, x):
        return np.asarray(_as_callable(self.beta)(np.asarray(x, dtype=float)), dtype=float)

    def dbeta_at(self, x):
        return np.asarray(_as_callable(self.dbeta)(np.asarray(x, dtype=float)), dtype=float)

    def mu_at(self, x):
        x = np.asarray(x, dtype=float)
        if callable(self.mu):
            return np.asarray(self.mu(x), dtype=float)
        n = x.shape[0] if x.ndim > 1 else x.size
        return np.full(n, float(self.mu))

    def g_at(self, x):
        g = self.g_inflow
        if g is None:
            return np.zeros(np.shape(x)[0] if np.ndim(x) > 1 else np.size(x))
        if isinstance(g, dict):
            return np.array([float(g[float(xi)]) for xi in np.atleast_1d(x)])
        if self.dim == 2:
            x = np.asarray(x, dtype=float)
            return np.asarray(g(x[:, 0], x[:, 1]), dtype=float)
        return np.asarray(g(np.asarray(x, dtype=float)), dtype=float)

    def boundary_flux_1d(self):
        """[(endpoint, beta.n)] with outward normals -1 at a, +1 at b."""
        a, b = self.domain
        ba = float(self.beta_at(np.array([a]))[0])
        bb = float(self.beta_at(np.array([b]))[0])
        return [(a, -ba), (b, bb)]

    def outflow_points(self):
        return tuple(x for x, bn in self.boundary_flux_1d() if bn > 0)

    def inflow_points(self):
        return tuple(x for x, bn in self.boundary_flux_1d() if bn < 0)

    # assumptions --------------------------------------------------------------
    def _samples(self):
        if self.dim == 1:
            a, b = self.domain
            g = grid_1d(np.linspace(a, b, 65), 4)
            mids = 0.5 * (g.breaks[:-1] + g.breaks[1:])
            return np.concatenate([g.points, mids])
        m = self.domain
        pts, _ = map_triangle_rule(m.element_vertices(), *triangle_rule(4))
        cent = m.element_vertices().mean(axis=1)
        return np.concatenate([pts.reshape(-1, 2), cent])

    def div_beta_samples(self, pts):
        if self.dim == 1:
            return self.dbeta_at(pts)
        return np.zeros(pts.shape[0])

    def friedrichs_margin(self):
        """Sampled min of mu - div(beta)/p (an estimate of mu_0)."""
        pts = self._samples()
        return float(np.min(self.mu_at(pts) - self.div_beta_samples(pts) / self.p))

    def mu_sup(self):
        return float(np.max(np.abs(self.mu_at(self._samples()))))

    def is_pure_advection(self):
        pts = self._samples()
        return bool(np.all(self.mu_at(pts) == 0) and np.all(self.div_beta_samples(pts) == 0))

    def check_assumptions(self):
        """Return 'friedrichs' or 'omega-filling'; raise if neither applies."""
        if self.friedrichs_margin() > 0:
            return "friedrichs"
        if self.omega_filling:
            return "omega-filling"
        raise AssumptionViolated(
            "mu - div(beta)/p is not bounded below by a positive constant and the "
            "problem is not flagged as omega-filling")


def stability_constants(problem):
    """(gamma_B, M_mu) from the sampled mu_0 and sup|mu|."""
    mu0 = problem.friedrichs_margin()
    musup = problem.mu_sup()
    m_mu = float(np.sqrt(1.0 + musup**2))
    if mu0 <= 0:
        raise AssumptionUnavailable(
            "gamma_B needs the positivity assumption; only the omega-filling bound applies")
    gamma = float(np.sqrt(mu0**2 / (1.0 + (mu0 + musup) ** 2)))
    return gamma, m_mu


# quadrature grids -------------------------------------------------------------

def _space_degree(space):
    return getattr(space, "degree", getattr(space, "k", 0))


def make_grid(problem, *spaces, order=None, extra_breaks=()):
    """Quadrature grid fine enough for all given spaces on the problem domain."""
    degs = [_space_degree(s) for s in spaces]
    deg = max(degs) if degs else 1
    if problem.dim == 2:
        m = problem.domain
        pts, wts = map_triangle_rule(m.element_vertices(), *triangle_rule(order or 4))
        nq = wts.shape[1]
        return TriGrid(pts.reshape(-1, 2), wts.ravel(), np.repeat(np.arange(m.n_elements), nq))
    a, b = problem.domain
    breaks = [np.array([a, b])] + [np.asarray(s.breakpoints()) for s in spaces]
    breaks.append(np.asarray(extra_breaks, dtype=float))
    allb = np.concatenate(breaks)
    allb = allb[(allb >= a) & (allb <= b)]
    return grid_1d(allb, order or max(4, int(deg) + 3))


# sampled operators ----------------------------------------------------------

def adjoint_samples(problem, test, grid):
    """Sparse samples of (psi, div(beta psi)) for every test basis function."""
    if problem.dim == 1:
        val, der = test.tabulate(grid)
        beta = problem.beta_at(grid.points)
        dbeta = problem.dbeta_at(grid.points)
        divb = sp.diags(dbeta) @ val + sp.diags(beta) @ der
        return val.tocsr(), divb.tocsr()
    val, gx, gy = test.tabulate(grid)
    beta = problem.domain.element_beta[grid.elem]
    divb = sp.diags(beta[:, 0]) @ gx + sp.diags(beta[:, 1]) @ gy
    return val.tocsr(), divb.tocsr()


def trial_samples(trial, grid):
    tab = trial.tabulate(grid)
    return tab[0].tocsr()


@dataclass
class AssembledOperator:
    B_matrix: sp.csr_matrix
    f_vector: Optional[np.ndarray]
    trial: object
    test: object

    def dense(self):
        return self.B_matrix.toarray()


def check_test_conformity(problem, test, tol=1e-12):
    """Raise if any test basis function is nonzero on the outflow boundary."""
    if problem.dim == 1:
        pts = np.array(problem.outflow_points())
        if pts.size == 0:
            return
        vals = test.eval(pts).toarray()
    else:
        m = problem.domain
        tags = classify_faces(m)
        faces = np.flatnonzero(tags == FaceClass.OUTFLOW)
        if faces.size == 0:
            return
        fv = m.vertices[m.face_vertices[faces]]
        t = np.array([0.0, 0.5, 1.0])
        pts = (fv[:, None, 0] * (1 - t)[None, :, None] + fv[:, None, 1] * t[None, :, None]).reshape(-1, 2)
        elems = np.repeat(m.face_elems[faces, 0], t.size)
        vals = test.eval_in(elems, pts).toarray()
    bad = np.abs(vals).max(initial=0.0)
    if bad > tol:
        raise NonconformingTestSpace(f"test basis reaches {bad:.3e} on the outflow boundary")


def assemble_B(problem, trial, test, grid=None, check=True):
    """Assemble b(trial_i, test_j) into a (test.ndof, trial.ndof) sparse matrix."""
    if check:
        check_test_conformity(problem, test)
    grid = grid if grid is not None else make_grid(problem, trial, test)
    val, divb = adjoint_samples(problem, test, grid)
    w = trial_samples(trial, grid)
    mu = problem.mu_at(grid.points)
    adj = sp.diags(mu) @ val - divb
    B = (adj.T @ sp.diags(grid.weights) @ w).tocsr()
    return AssembledOperator(B, None, trial, test)


def assemble_rhs(problem, test, grid=None):
    """Load vector <f, psi_j> including point sources and inflow data."""
    grid = grid if grid is not None else make_grid(problem, test)
    f = np.zeros(test.ndof)
    if problem.f_source is not None:
        if problem.dim == 1:
            fv = np.asarray(problem.f_source(grid.points), dtype=float)
            val = test.tabulate(grid)[0]
        else:
            fv = np.asarray(problem.f_source(grid.points[:, 0], grid.points[:, 1]), dtype=float)
            val = test.tabulate(grid)[0]
        f += val.T @ (grid.weights * fv)
    if problem.dim == 1:
        for x0, w0 in problem.diracs:
            f += w0 * test.eval(np.array([x0])).toarray()[0]
        for x0, bn in problem.boundary_flux_1d():
            if bn < 0:
                g = float(problem.g_at(np.array([x0]))[0])
                f += abs(bn) * g * test.eval(np.array([x0])).toarray()[0]
        return f
    m = problem.domain
    tags = classify_faces(m)
    faces = np.flatnonzero(tags == FaceClass.INFLOW)
    if faces.size == 0:
        return f
    x, w = gauss_legendre(5)
    fv = m.vertices[m.face_vertices[faces]]
    elems = m.face_elems[faces, 0]
    bn = np.abs(np.einsum("fi,fi->f", m.element_beta[elems], m.face_normals[faces]))
    pts, wts, owner = [], [], []
    for i in range(faces.size):
        p0, p1 = fv[i]
        d = p1 - p0
        length = float(np.hypot(*d))
        cuts = [0.0, 1.0]
        for c in problem.g_breaks:
            s = float(np.dot(np.asarray(c, dtype=float) - p0, d)) / length**2
            off = np.hypot(*(p0 + s * d - np.asarray(c, dtype=float)))
            if 0.0 < s < 1.0 and off <= 1e-12 * max(1.0, length):
                cuts.append(s)
        cuts = sorted(cuts)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            t, tw = map_rule(lo, hi, x, w)
            pts.append(p0[None, :] + t[:, None] * d[None, :])
            wts.append(tw * length * bn[i])
            owner.append(np.full(t.size, elems[i]))
    pts = np.concatenate(pts)
    g = problem.g_at(pts)
    vals = test.eval_in(np.concatenate(owner), pts)
    f += vals.T @ (np.concatenate(wts) * g)
    return f


def assemble(problem, trial, test, grid=None):
    grid = grid if grid is not None else make_grid(problem, trial, test)
    op = assemble_B(problem, trial, test, grid)
    op.f_vector = assemble_rhs(problem, test, grid)
    return op


def gram_matrix(problem, test, norm=TestNormKind.ADJOINT_GRAPH, q=2.0, grid=None, check=True):
    """Gram matrix of the test basis in the q = 2 inner product of the chosen norm."""
    if q != 2:
        raise ValidationError("gram_matrix is the q = 2 inner product; use duality for q != 2")
    if norm is TestNormKind.DERIVATIVE_ONLY and problem.dim != 1:
        raise ValidationError("the derivative-only norm is defined in 1-D only")
    grid = grid if grid is not None else make_grid(problem, test)
    W = sp.diags(grid.weights)
    if norm is TestNormKind.DERIVATIVE_ONLY:
        der = test.tabulate(grid)[1]
        G = der.T @ W @ der
    else:
        val, divb = adjoint_samples(problem, test, grid)
        G = val.T @ W @ val + divb.T @ W @ divb
    G = ((G + G.T) * 0.5).tocsr()
    if check:
        assert_spd(G)
    return G


def assert_spd(G):
    """Raise SingularGram unless G is numerically positive definite."""
    n = G.shape[0]
    if n == 0:
        return
    if n <= DENSE_THRESHOLD:
        try:
            sla.cholesky(G.toarray(), lower=True)
        except np.linalg.LinAlgError as exc:
            raise SingularGram(f"Gram matrix is not positive definite: {exc}") from exc
        return
    try:
        lu = spla.splu(G.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SingularGram(f"Gram matrix is singular: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise SingularGram("Gram matrix is not positive definite")
