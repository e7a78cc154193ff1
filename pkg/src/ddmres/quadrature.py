"""Quadrature rules on intervals and triangles.

Interval rules live on the reference interval [-1, 1]; triangle rules on the
reference triangle (0,0), (1,0), (0,1) with weights summing to 1/2.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi


@lru_cache(maxsize=None)
def gauss_legendre(n):
    """n-point Gauss-Legendre rule on [-1, 1]; exact for degree 2n-1."""
    x, w = legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_lobatto(n):
    """n-point Gauss-Lobatto nodes and weights on [-1, 1] (n >= 2).

    Exact for polynomials of degree 2n-3.
    """
    if n < 2:
        raise ValueError("Gauss-Lobatto needs at least two points")
    coef = np.zeros(n)
    coef[-1] = 1.0
    inner = np.sort(legendre.legroots(legendre.legder(coef))) if n > 2 else np.array([])
    x = np.concatenate(([-1.0], inner, [1.0]))
    pn = legendre.legval(x, coef)
    w = 2.0 / (n * (n - 1) * pn**2)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def gauss_jacobi(n, alpha, beta):
    """Gauss-Jacobi rule for weight (1-x)^alpha (1+x)^beta on [-1, 1]."""
    x, w = roots_jacobi(n, alpha, beta)
    return x, w


def map_rule(a, b, x, w):
    """Affinely map a reference rule on [-1, 1] to [a, b]."""
    half = 0.5 * (b - a)
    return a + half * (np.asarray(x) + 1.0), half * np.asarray(w)


def endpoint_singular_rule(a, b, n, alpha, at="left"):
    """Rule on [a, b] exact for f = |x - a|^alpha * poly (or |b - x|^alpha).

    Returned weights already absorb the power, so the caller sums
    ``w * f(x)`` with the full integrand.
    """
    if at == "left":
        x, w = gauss_jacobi(n, 0.0, alpha)
        pts, wts = map_rule(a, b, x, w)
        dist = pts - a
    else:
        x, w = gauss_jacobi(n, alpha, 0.0)
        pts, wts = map_rule(a, b, x, w)
        dist = b - pts
    # the Jacobi weight lives on [-1, 1]: rescale (1+x)^alpha to (x-a)^alpha
    scale = (0.5 * (b - a)) ** alpha
    return pts, wts * scale / dist**alpha


def graded_rule(a, b, order=12, at="left", ratio=0.15, levels=40, drop_endpoint=False,
                floor_ulps=None):
    """Composite Gauss rule on [a, b], geometrically graded toward one end.

    Used for integrable point singularities whose exponent is not known in
    advance. With ``drop_endpoint`` nodes that round onto the graded end
    are discarded, which matters when the integrand is infinite there.

    ``floor_ulps`` stops the grading at that many ulps from the graded end
    and returns ``(x, w, tail)``, where ``tail`` is the uncovered length
    next to the end; the caller integrates it separately.
    """
    length = b - a
    end = a if at == "left" else b
    cuts = [length * ratio**k for k in range(levels)]
    if floor_ulps is not None:
        floor = floor_ulps * np.spacing(max(abs(a), abs(b), 1e-300))
        cuts = [c for c in cuts if c >= floor] or [length]
        tail = cuts[-1]  # [end, end + tail] is left to the caller
    else:
        cuts.append(0.0)
    cuts = np.array(cuts[::-1])
    if at == "left":
        edges = a + cuts
    else:
        edges = b - cuts[::-1]
    x, w = gauss_legendre(order)
    pts, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if hi <= lo:
            continue
        p, q = map_rule(lo, hi, x, w)
        if drop_endpoint:
            # pieces a few ulps wide can round nodes onto the graded end
            keep = p != end
            p, q = p[keep], q[keep]
        pts.append(p)
        wts.append(q)
    x, w = np.concatenate(pts), np.concatenate(wts)
    if floor_ulps is not None:
        return x, w, float(tail)
    return x, w


def power_tail(g, end, tail, side):
    """Integral of ``g`` over the ``tail`` next to ``end``, assuming g ~ C s^alpha.

    ``side`` is +1 when the tail lies right of ``end``. The exponent is read
    off from samples at s = tail and s = tail / 2; a non-integrable estimate
    (alpha <= -1) yields inf.
    """
    if tail <= 0.0:
        return 0.0
    g1, g2 = g(np.array([end + side * tail, end + side * tail / 2]))
    if g1 == 0.0 or g2 == 0.0:
        return tail * 0.5 * (g1 + g2)
    alpha = -np.log2(g2 / g1)
    if alpha <= -1.0:
        return np.inf
    return tail * g1 / (1.0 + alpha)


@dataclass(frozen=True)
class QuadGrid1D:
    """A composite Gauss rule over a partition of an interval.

    ``cell[i]`` is the index of the sub-interval that contains ``points[i]``.
    Points are strictly interior to their sub-interval.
    """

    breaks: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    @property
    def size(self):
        return self.points.size


def grid_1d(breaks, order):
    """Composite ``order``-point Gauss-Legendre rule on sorted, unique breaks."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    x, w = gauss_legendre(order)
    lo = breaks[:-1, None]
    half = 0.5 * np.diff(breaks)[:, None]
    pts = lo + half * (x[None, :] + 1.0)
    wts = half * w[None, :]
    cell = np.repeat(np.arange(breaks.size - 1), order)
    return QuadGrid1D(breaks, pts.ravel(), wts.ravel(), cell)


# Degree-4 symmetric rule (6 points), barycentric orbits with area-normalised weights.
_TRI4 = (
    (0.445948490915964886318329253883, 0.223381589678011465944294624521),
    (0.091576213509770743459571463402, 0.109951743655321867389038708812),
)


@lru_cache(maxsize=None)
def triangle_symmetric_deg4():
    """6-point symmetric rule on the reference triangle, exact to degree 4."""
    pts, wts = [], []
    for a, w in _TRI4:
        b = 1.0 - 2.0 * a
        for bary in ((a, a, b), (a, b, a), (b, a, a)):
            pts.append(bary[1:])
            wts.append(0.5 * w)
    return np.array(pts), np.array(wts)


@lru_cache(maxsize=None)
def triangle_collapsed(n):
    """Collapsed (Duffy) tensor Gauss rule with n*n points; exact to degree 2n-2."""
    x, w = gauss_legendre(n)
    xj, wj = gauss_jacobi(n, 1.0, 0.0)
    # s along the collapsed direction carries the Jacobian weight (1 - s)
    s = 0.5 * (xj + 1.0)
    ws = 0.25 * wj
    t = 0.5 * (x + 1.0)
    wt = 0.5 * w
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    xi = S
    eta = (1.0 - S) * T
    return np.column_stack([xi.ravel(), eta.ravel()]), W.ravel()


def triangle_rule(degree):
    if degree <= 4:
        return triangle_symmetric_deg4()
    n = (degree + 3) // 2
    return triangle_collapsed(n)


def map_triangle_rule(verts, ref_pts, ref_wts):
    """Map a reference rule onto triangles.

    ``verts`` has shape (ntri, 3, 2). Returns points (ntri, nq, 2) and
    weights (ntri, nq) scaled by each triangle's area.
    """
    verts = np.asarray(verts, dtype=float)
    v0 = verts[:, 0, :]
    e1 = verts[:, 1, :] - v0
    e2 = verts[:, 2, :] - v0
    det = np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    pts = (v0[:, None, :] + ref_pts[None, :, 0, None] * e1[:, None, :]
           + ref_pts[None, :, 1, None] * e2[:, None, :])
    wts = det[:, None] * ref_wts[None, :]
    return pts, wts


@dataclass(frozen=True)
class TriGrid:
    """Quadrature points over a set of triangles, flattened element-major."""

    points: np.ndarray
    weights: np.ndarray
    elem: np.ndarray

    def integrate(self, values):
        return float(np.dot(self.weights, values))

    @property
    def size(self):
        return self.weights.size
