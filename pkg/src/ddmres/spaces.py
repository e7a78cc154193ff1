"""Discrete trial and test spaces.

Every space evaluates its whole basis at a batch of points and returns
sparse matrices of shape (npoints, ndof); assembly works on these
tabulations. 1-D spaces use ``eval(x, deriv)``; 2-D spaces use
``eval_in(elems, points)`` since points on tangential faces may carry two
traces.
"""
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DegreeTooLow, OutOfDomain, ValidationError
from .mesh import Mesh1D, TriMesh2D, refine_uniform_1d
from .quadrature import gauss_legendre, gauss_lobatto, map_rule


class DiscreteSpace:
    kind = "abstract"
    dim = 1
    mesh = None

    @property
    def ndof(self):
        raise NotImplementedError

    def breakpoints(self):
        """Points where the basis may lose smoothness (1-D)."""
        return self.mesh.nodes

    def eval(self, x, deriv=False):
        raise NotImplementedError

    def tabulate(self, grid):
        """Values and derivatives at the points of a quadrature grid."""
        return self.eval(grid.points), self.eval(grid.points, deriv=True)

    def eval_basis(self, dof, point):
        """(value, derivative) of one basis function at one point."""
        if not 0 <= dof < self.ndof:
            raise IndexError(f"dof {dof} out of range for {self.ndof} dofs")
        x = np.atleast_1d(float(point))
        v = self.eval(x)[0, dof]
        d = self.eval(x, deriv=True)[0, dof]
        return float(v), float(d)

    def _check_domain(self, x):
        a, b = self.mesh.a, self.mesh.b
        tol = 1e-12 * (b - a)
        if np.any(x < a - tol) or np.any(x > b + tol):
            raise OutOfDomain(f"points outside [{a}, {b}]")

    def __repr__(self):
        return f"{type(self).__name__}(ndof={self.ndof})"


class P0Space(DiscreteSpace):
    """Piecewise constants; dof i is the indicator of element i."""

    kind = "P0"

    def __init__(self, mesh):
        self.mesh = mesh
        self.dim = 2 if isinstance(mesh, TriMesh2D) else 1

    @property
    def ndof(self):
        return self.mesh.n_elements

    def eval(self, x, deriv=False):
        x = np.asarray(x, dtype=float)
        self._check_domain(x)
        e = self.mesh.locate(x)
        vals = np.zeros(x.size) if deriv else np.ones(x.size)
        return sp.csr_matrix((vals, (np.arange(x.size), e)), shape=(x.size, self.ndof))

    def eval_in(self, elems, points=None):
        elems = np.asarray(elems)
        n = elems.size
        return sp.csr_matrix((np.ones(n), (np.arange(n), elems)), shape=(n, self.ndof))

    def tabulate(self, grid):
        if self.dim == 2:
            val = self.eval_in(grid.elem)
            zero = sp.csr_matrix(val.shape)
            return val, zero, zero
        return super().tabulate(grid)


class LagrangeSpace1D(DiscreteSpace):
    """Continuous piecewise polynomials of degree k on Gauss-Lobatto nodes.

    ``vanish_at`` lists mesh nodes where every basis function must be zero;
    the nodal basis functions of those nodes are dropped.
    """

    kind = "PkCont1D"

    def __init__(self, mesh, k, vanish_at=()):
        if k < 1:
            raise DegreeTooLow("continuous Lagrange spaces need k >= 1")
        self.mesh = mesh
        self.k = int(k)
        self.vanish_at = tuple(float(v) for v in vanish_at)
        ref, _ = gauss_lobatto(self.k + 1)
        self._ref = np.asarray(ref)
        vander = np.vander(self._ref, self.k + 1, increasing=True)
        self._coef = np.linalg.inv(vander)  # column j: monomial coefficients of L_j
        n_nodes = self.k * mesh.n_elements + 1
        coords = self.node_coords()
        dof = np.arange(n_nodes)
        fixed = np.zeros(n_nodes, dtype=bool)
        for v in self.vanish_at:
            hit = np.flatnonzero(np.abs(coords - v) <= 1e-12 * max(1.0, abs(v)))
            if hit.size == 0:
                raise ValidationError(f"constraint point {v} is not a mesh node")
            fixed[hit] = True
        self._fixed = fixed
        dof = -np.ones(n_nodes, dtype=np.int64)
        dof[~fixed] = np.arange(int((~fixed).sum()))
        self._node_to_dof = dof

    @property
    def ndof(self):
        return int((~self._fixed).sum())

    def node_coords(self):
        """Coordinates of all global Lagrange nodes (constrained ones included)."""
        x0 = self.mesh.nodes[:-1, None]
        h = self.mesh.h[:, None]
        pts = x0 + 0.5 * h * (self._ref[None, :-1] + 1.0)
        return np.append(pts.ravel(), self.mesh.nodes[-1])

    def dof_coords(self):
        return self.node_coords()[~self._fixed]

    def eval(self, x, deriv=False):
        x = np.asarray(x, dtype=float).ravel()
        self._check_domain(x)
        e = self.mesh.locate(x)
        h = self.mesh.h[e]
        t = 2.0 * (x - self.mesh.nodes[e]) / h - 1.0
        k = self.k
        if deriv:
            powers = np.arange(1, k + 1)
            mono = np.zeros((x.size, k + 1))
            mono[:, 1:] = powers * t[:, None] ** (powers - 1)
            local = mono @ self._coef * (2.0 / h)[:, None]
        else:
            local = np.vander(t, k + 1, increasing=True) @ self._coef
            # exact Kronecker values at the Lagrange nodes themselves
            at_node = np.abs(t[:, None] - self._ref[None, :]) <= 1e-14
            hit = at_node.any(axis=1)
            local[hit] = at_node[hit].astype(float)
        nodes = e[:, None] * k + np.arange(k + 1)[None, :]
        cols = self._node_to_dof[nodes]
        rows = np.repeat(np.arange(x.size), k + 1).reshape(x.size, k + 1)
        keep = cols >= 0
        return sp.csr_matrix((local[keep], (rows[keep], cols[keep])), shape=(x.size, self.ndof))

    def full_from_dofs(self, coeffs):
        """Expand dof coefficients to all Lagrange nodes (zeros at constrained ones)."""
        full = np.zeros(self._fixed.size)
        full[~self._fixed] = coeffs
        return full

    def dofs_from_full(self, full, tol=1e-12):
        full = np.asarray(full, dtype=float)
        scale = max(1.0, float(np.abs(full).max(initial=0.0)))
        if np.any(np.abs(full[self._fixed]) > tol * scale):
            raise ValidationError("function does not satisfy the space's boundary constraint")
        return full[~self._fixed].copy()


class P1Cont1D(LagrangeSpace1D):
    kind = "P1Cont1D"

    def __init__(self, mesh, vanish_at=()):
        super().__init__(mesh, 1, vanish_at)


class PkCont1D(LagrangeSpace1D):
    kind = "PkCont1D"


class RefinedP1(LagrangeSpace1D):
    """Continuous piecewise linears on the mesh bisected ``level`` times."""

    kind = "RefinedP1"

    def __init__(self, mesh, level, vanish_at=()):
        self.coarse_mesh = mesh
        self.level = int(level)
        super().__init__(refine_uniform_1d(mesh, level), 1, vanish_at)


class P1Conf2D(DiscreteSpace):
    """Element-wise linear functions stored per (basis function, element).

    Basis function ``T`` is given on the elements ``elems[indptr[T]:indptr[T+1]]``
    by vertex values ``vals[...]`` (one triple per element, in the triangle's
    vertex order) and vanishes elsewhere. No global vertex numbering is
    used, so traces may jump across tangential faces.
    """

    kind = "P1Conf2D"
    dim = 2

    def __init__(self, mesh, indptr, elems, vals):
        self.mesh = mesh
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.elems = np.asarray(elems, dtype=np.int64)
        self.vals = np.asarray(vals, dtype=float).reshape(-1, 3)

    @property
    def ndof(self):
        return self.indptr.size - 1

    def breakpoints(self):
        raise TypeError("2-D spaces have no breakpoints")

    @cached_property
    def _owner(self):
        return np.repeat(np.arange(self.ndof), np.diff(self.indptr))

    @cached_property
    def _by_elem(self):
        """Entries regrouped by element: (ptr, dof, vals, grads) with ptr over elements."""
        order = np.argsort(self.elems, kind="stable")
        counts = np.bincount(self.elems, minlength=self.mesh.n_elements)
        ptr = np.concatenate(([0], np.cumsum(counts)))
        return ptr, self._owner[order], self.vals[order], self._grads[order]

    @cached_property
    def _grads(self):
        """Constant gradient of each stored linear piece, shape (nnz, 2)."""
        vt = self.mesh.element_vertices(self.elems)
        e1 = vt[:, 1] - vt[:, 0]
        e2 = vt[:, 2] - vt[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        d1 = self.vals[:, 1] - self.vals[:, 0]
        d2 = self.vals[:, 2] - self.vals[:, 0]
        gx = (d1 * e2[:, 1] - d2 * e1[:, 1]) / det
        gy = (d2 * e1[:, 0] - d1 * e2[:, 0]) / det
        return np.column_stack([gx, gy])

    def piece_gradients(self):
        return self._grads

    def _barycentric(self, elems, points):
        vt = self.mesh.element_vertices(elems)
        a = vt[:, 0]
        e1 = vt[:, 1] - a
        e2 = vt[:, 2] - a
        d = points - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        return np.column_stack([1.0 - l1 - l2, l1, l2])

    def eval_in(self, elems, points, deriv=None):
        """Basis values (or gradient component ``deriv`` in {0, 1}) at points of given elements."""
        elems = np.asarray(elems, dtype=np.int64)
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        ptr, dof, vals, grads = self._by_elem
        counts = (ptr[elems + 1] - ptr[elems])
        rows = np.repeat(np.arange(elems.size), counts)
        starts = np.repeat(ptr[elems], counts)
        within = np.arange(rows.size) - np.repeat(np.cumsum(counts) - counts, counts)
        idx = starts + within
        if deriv is None:
            bary = self._barycentric(elems, points)
            data = np.einsum("ij,ij->i", vals[idx], bary[rows])
        else:
            data = grads[idx, deriv]
        return sp.csr_matrix((data, (rows, dof[idx])), shape=(elems.size, self.ndof))

    def tabulate(self, grid):
        return (self.eval_in(grid.elem, grid.points),
                self.eval_in(grid.elem, grid.points, deriv=0),
                self.eval_in(grid.elem, grid.points, deriv=1))

    def eval_basis(self, dof, point):
        if not 0 <= dof < self.ndof:
            raise IndexError(f"dof {dof} out of range for {self.ndof} dofs")
        p = np.asarray(point, dtype=float).reshape(1, 2)
        k = self.mesh.locate(p)
        if k[0] < 0:
            raise OutOfDomain(f"point {point} is outside the mesh")
        v = self.eval_in(k, p)[0, dof]
        g = np.array([self.eval_in(k, p, deriv=i)[0, dof] for i in range(2)])
        return float(v), g

    def element_values(self, dof):
        """(elements, vertex-value triples) of one basis function."""
        s = slice(self.indptr[dof], self.indptr[dof + 1])
        return self.elems[s], self.vals[s]


class FortinOperator1D:
    """Linear interpolant plus one quadratic bubble per element.

    The bubble coefficient makes the element integral of the image equal the
    element integral of the argument, so ``b(w, Pi v) = b(w, v)`` for every
    continuous piecewise-linear ``w`` when ``b(w, v) = -int w v'``.
    """

    def __init__(self, mesh, k=2):
        if k < 2:
            raise DegreeTooLow("the bubble construction needs k >= 2")
        self.mesh = mesh
        self.k = int(k)
        self.target = PkCont1D(mesh, self.k)

    def bubble_coefficients(self, v, order=20):
        """alpha_j for every element, with element integrals of v by Gauss quadrature."""
        nodes = self.mesh.nodes
        h = self.mesh.h
        x, w = gauss_legendre(order)
        pts, wts = map_rule(nodes[:-1, None], nodes[1:, None], x[None, :], w[None, :])
        integral = np.sum(wts * v(pts), axis=1)
        vn = v(nodes)
        linear = 0.5 * h * (vn[:-1] + vn[1:])
        # integral of (x - x_{j-1})(x - x_j) over T_j is -h^3/6
        return (integral - linear) / (-(h**3) / 6.0)

    def apply(self, v, order=20):
        """Nodal coefficients of Pi v in the unconstrained PkCont1D(k) basis."""
        nodes = self.mesh.nodes
        alpha = self.bubble_coefficients(v, order)
        coords = self.target.node_coords()
        e = np.minimum(np.arange(coords.size) // self.k, self.mesh.n_elements - 1)
        xl, xr = nodes[e], nodes[e + 1]
        vn = v(nodes)
        lin = (vn[e] * (xr - coords) + vn[e + 1] * (coords - xl)) / (xr - xl)
        return lin + alpha[e] * (coords - xl) * (coords - xr)

    def evaluate(self, coeffs, x, deriv=False):
        return self.target.eval(x, deriv) @ coeffs


def fortin_apply(op, v, order=20):
    return op.apply(v, order)
