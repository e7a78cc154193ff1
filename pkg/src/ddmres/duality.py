"""Duality maps of L^q and of the discrete test-space norms.

Test norms are represented by a list of sampled linear operators
``op_k`` (quadrature points x test dofs) and quadrature weights, so that
``||v||_V^2 = sum_k ||op_k v||_q^2``. The graph norm uses ``[psi,
div(beta psi)]`` and the 1-D derivative norm uses ``[psi']``. Since
``J_V`` is the gradient of ``v -> ||v||_V^2 / 2``, it is the sum of the L^q
duality maps of the pieces, each with its own normalization.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import SingularNormalization, ValidationError
from .problem import TestNormKind, adjoint_samples, make_grid


@dataclass(frozen=True)
class DualityMapConfig:
    q: float
    epsilon: float = 0.0
    norm: TestNormKind = TestNormKind.ADJOINT_GRAPH
    full_jacobian: bool = False

    def __post_init__(self):
        if not 1.0 < self.q < np.inf:
            raise ValidationError(f"q must lie in (1, inf), got {self.q}")
        if self.epsilon < 0:
            raise ValidationError("epsilon must be non-negative")


def default_eps_rel(q):
    """Relative regularization used by the solver for a given q."""
    if q <= 4:
        return 1e-8
    if q <= 10:
        return 1e-6
    return 1e-4


def _scaled(v, q, eps, weights):
    """Return (s/N, N) with s = sqrt(v^2 + eps^2), computed without overflow."""
    s = np.sqrt(v * v + eps * eps) if eps else np.abs(v)
    m = float(s.max(initial=0.0))
    if m == 0.0:
        return None, 0.0
    t = s / m
    moment = float(np.dot(weights, t**q))
    if not np.isfinite(moment) or moment <= 0.0:
        raise SingularNormalization("L^q normalization vanished or overflowed")
    scale = moment ** (1.0 / q)
    return t / scale, m * scale


def lq_norm(v, q, weights, eps=0.0):
    _, n = _scaled(np.asarray(v, dtype=float), q, eps, np.asarray(weights, dtype=float))
    return n


def jq_value(v, q, eps=0.0, weights=None):
    """Samples of ``J_q(v) = ||v||^{2-q} |v|^{q-1} sign v`` (regularized by eps).

    ``weights`` are the quadrature weights attached to the samples; without
    them the samples are treated as equally weighted on a unit measure.
    """
    v = np.asarray(v, dtype=float)
    w = np.full(v.size, 1.0 / max(v.size, 1)) if weights is None else np.asarray(weights, dtype=float)
    if q == 2 and eps == 0:
        return v.copy()
    ratio, norm = _scaled(v, q, eps, w)
    if ratio is None:
        return np.zeros_like(v)
    if eps == 0:
        # |v|^(q-1) sign v without forming 0^(q-2) at zeros of v
        return np.sign(v) * ratio ** (q - 1.0) * norm
    return ratio ** (q - 2.0) * v


class TestNorm:
    """A test-space norm built from sampled operators and quadrature weights."""

    def __init__(self, ops, weights, q):
        self.ops = [sp.csr_matrix(o) for o in ops]
        self.weights = np.asarray(weights, dtype=float)
        self.q = float(q)
        self._W = sp.diags(self.weights)

    @property
    def ndof(self):
        return self.ops[0].shape[1]

    def with_q(self, q):
        return TestNorm(self.ops, self.weights, q)

    def gram(self):
        G = sum(o.T @ self._W @ o for o in self.ops)
        return ((G + G.T) * 0.5).tocsr()

    def epsilons(self, r, eps_rel):
        """Absolute regularization per operator, relative to the sup of op r."""
        return [eps_rel * max(float(np.abs(o @ r).max(initial=0.0)), 1e-30) for o in self.ops]

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return float(np.sqrt(sum(lq_norm(o @ r, self.q, self.weights) ** 2 for o in self.ops)))

    def energy(self, r, eps=None):
        """Half the squared (regularized) norm; its gradient is :meth:`apply`."""
        r = np.asarray(r, dtype=float)
        eps = eps if eps is not None else [0.0] * len(self.ops)
        return 0.5 * sum(lq_norm(o @ r, self.q, self.weights, e) ** 2 for o, e in zip(self.ops, eps))

    def apply(self, r, eps=None):
        """Coefficients of <J_V(r), psi_j> for every test basis function."""
        r = np.asarray(r, dtype=float)
        eps = eps if eps is not None else [0.0] * len(self.ops)
        out = np.zeros(self.ndof)
        for o, e in zip(self.ops, eps):
            out += o.T @ (self.weights * jq_value(o @ r, self.q, e, self.weights))
        return out

    def jacobian(self, r, eps, full=False):
        """Derivative of :meth:`apply`.

        Returns ``(K, lowrank)`` where ``K`` is the sparse frozen-normalization
        part and ``lowrank`` a list of ``(c, a)`` with the full Jacobian equal
        to ``K + sum c a a^T``. ``lowrank`` is empty unless ``full``.
        """
        r = np.asarray(r, dtype=float)
        q = self.q
        K = None
        lowrank = []
        for o, e in zip(self.ops, eps):
            v = o @ r
            if q == 2:
                d = np.ones_like(v)
                ratio, norm = None, 0.0
            else:
                ratio, norm = _scaled(v, q, e, self.weights)
                if ratio is None:
                    if e == 0:
                        raise SingularNormalization("Jacobian at r = 0 needs epsilon > 0")
                    d = np.zeros_like(v)
                else:
                    s2 = v * v + e * e
                    d = ratio ** (q - 2.0) * ((q - 1.0) * v * v + e * e) / s2
            part = o.T @ sp.diags(self.weights * d) @ o
            K = part if K is None else K + part
            if full and q != 2 and ratio is not None:
                a = o.T @ (self.weights * ratio ** (q - 2.0) * v)
                lowrank.append(((2.0 - q) / norm**2, a))
        return K.tocsr(), lowrank

    def jacobian_dense(self, r, eps, full=False):
        K, lowrank = self.jacobian(r, eps, full)
        D = K.toarray()
        for c, a in lowrank:
            D += c * np.outer(a, a)
        return D


def build_test_norm(problem, test, kind=TestNormKind.ADJOINT_GRAPH, q=None, grid=None):
    q = problem.q if q is None else q
    if kind is TestNormKind.DERIVATIVE_ONLY and problem.dim != 1:
        raise ValidationError("the derivative-only norm is defined in 1-D only")
    grid = grid if grid is not None else make_grid(problem, test)
    if kind is TestNormKind.DERIVATIVE_ONLY:
        ops = [test.tabulate(grid)[1]]
    else:
        ops = list(adjoint_samples(problem, test, grid))
    return TestNorm(ops, grid.weights, q)


def _basis_vector(n, j):
    e = np.zeros(n)
    e[j] = 1.0
    return e


def jv_residual_form(r, v, problem, config, test, grid=None):
    """<J_V(r), psi_v> for the graph norm."""
    if config.norm is not TestNormKind.ADJOINT_GRAPH:
        raise ValidationError("jv_residual_form is for the graph norm; use jv_1d_form")
    tn = build_test_norm(problem, test, TestNormKind.ADJOINT_GRAPH, config.q, grid)
    eps = [config.epsilon] * len(tn.ops)
    return float(tn.apply(r, eps) @ _basis_vector(tn.ndof, v))


def jv_1d_form(r, v, problem, config, test, grid=None):
    """<J_q(r'), psi_v'> for the 1-D derivative norm."""
    tn = build_test_norm(problem, test, TestNormKind.DERIVATIVE_ONLY, config.q, grid)
    return float(tn.apply(r, [config.epsilon]) @ _basis_vector(tn.ndof, v))


def jv_jacobian(r, problem, config, test, grid=None):
    """Dense symmetric Jacobian of r -> J_V(r) (full if ``config.full_jacobian``)."""
    tn = build_test_norm(problem, test, config.norm, config.q, grid)
    return tn.jacobian_dense(r, [config.epsilon] * len(tn.ops), config.full_jacobian)
