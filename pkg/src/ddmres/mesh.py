"""1-D partitions and flow-aligned triangulations.

Meshes are immutable once built. The 2-D mesh carries one constant advection
vector per triangle; faces are derived from the triangle list.
"""
import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import AmbiguousFace, CycleDetected, InvalidInterval, InvalidMesh

# beta.n below TANGENT_TOL * |beta| counts as zero; between that and
# AMBIGUOUS_TOL * |beta| the sign is not trusted.
TANGENT_TOL = 1e-12
AMBIGUOUS_TOL = 1e-9


class FaceClass(enum.IntEnum):
    INFLOW = 0
    OUTFLOW = 1
    TANGENTIAL = 2
    INTERIOR_CROSSING = 3


@dataclass(frozen=True, eq=False)
class Mesh1D:
    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise InvalidMesh("a 1-D mesh needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise InvalidMesh("mesh nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def a(self):
        return float(self.nodes[0])

    @property
    def b(self):
        return float(self.nodes[-1])

    @property
    def n_elements(self):
        return self.nodes.size - 1

    @property
    def h(self):
        return np.diff(self.nodes)

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def measure(self):
        return float(self.h.sum())

    def locate(self, x):
        """Element index for each point; nodes go to the element on their left."""
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.nodes, x, side="left") - 1
        return np.clip(idx, 0, self.n_elements - 1)

    def __eq__(self, other):
        return isinstance(other, Mesh1D) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


def uniform_mesh_1d(a, b, n):
    if not a < b:
        raise InvalidInterval(f"need a < b, got ({a}, {b})")
    if n < 1:
        raise InvalidInterval("need at least one element")
    return Mesh1D(np.linspace(a, b, n + 1))


def refine_uniform_1d(mesh, levels):
    """Bisect every element ``levels`` times."""
    if levels < 0:
        raise ValueError("levels must be non-negative")
    nodes = mesh.nodes
    m = 2**levels
    if m == 1:
        return Mesh1D(nodes.copy())
    t = np.arange(m) / m
    fine = (nodes[:-1, None] + t[None, :] * np.diff(nodes)[:, None]).ravel()
    return Mesh1D(np.append(fine, nodes[-1]))


def _edge_normal(p, q):
    d = q - p
    n = np.column_stack([d[:, 1], -d[:, 0]])
    return n / np.linalg.norm(n, axis=1)[:, None]


class TriMesh2D:
    """Conforming triangulation with a constant advection vector per triangle.

    Local face ``i`` of a triangle is the edge opposite local vertex ``i``.
    Triangles are stored counter-clockwise.
    """

    def __init__(self, vertices, triangles, element_beta, check=True):
        v = np.array(vertices, dtype=float).reshape(-1, 2)
        t = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        beta = np.array(element_beta, dtype=float).reshape(-1, 2)
        if beta.shape[0] != t.shape[0]:
            raise InvalidMesh("need one beta vector per triangle")
        if t.size and (t.min() < 0 or t.max() >= v.shape[0]):
            raise InvalidMesh("triangle refers to a missing vertex")
        area2 = self._signed_area2(v, t)
        flip = area2 < 0
        t[flip] = t[flip][:, [0, 2, 1]]
        for arr in (v, t, beta):
            arr.setflags(write=False)
        self.vertices = v
        self.triangles = t
        self.element_beta = beta
        if check:
            if np.any(np.abs(area2) <= 1e-300):
                raise InvalidMesh("degenerate triangle")
            self.face_elems  # builds faces, rejects non-manifold edges

    @staticmethod
    def _signed_area2(v, t):
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])

    @property
    def n_elements(self):
        return self.triangles.shape[0]

    @cached_property
    def areas(self):
        return 0.5 * self._signed_area2(self.vertices, self.triangles)

    def measure(self):
        return float(self.areas.sum())

    def element_vertices(self, elems=None):
        t = self.triangles if elems is None else self.triangles[elems]
        return self.vertices[t]

    @cached_property
    def _faces(self):
        t = self.triangles
        nt = t.shape[0]
        loc = np.array([[1, 2], [2, 0], [0, 1]])
        ev = t[:, loc]  # (nt, 3, 2)
        key = np.sort(ev.reshape(-1, 2), axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        if np.any(counts > 2):
            raise InvalidMesh("an edge is shared by more than two triangles")
        nf = uniq.shape[0]
        face_elems = -np.ones((nf, 2), dtype=np.int64)
        face_local = -np.ones((nf, 2), dtype=np.int64)
        elem_ids = np.repeat(np.arange(nt), 3)
        local_ids = np.tile(np.arange(3), nt)
        order = np.argsort(inv, kind="stable")
        slot = np.zeros(nf, dtype=np.int64)
        for e in order:
            f = inv[e]
            face_elems[f, slot[f]] = elem_ids[e]
            face_local[f, slot[f]] = local_ids[e]
            slot[f] += 1
        elem_faces = inv.reshape(nt, 3)
        # orient each face from its first element's point of view
        k0 = face_elems[:, 0]
        l0 = face_local[:, 0]
        fv = t[k0[:, None], loc[l0]]
        normals = _edge_normal(self.vertices[fv[:, 0]], self.vertices[fv[:, 1]])
        return fv, face_elems, face_local, elem_faces, normals

    @property
    def face_vertices(self):
        return self._faces[0]

    @property
    def face_elems(self):
        return self._faces[1]

    @property
    def face_local(self):
        return self._faces[2]

    @property
    def elem_faces(self):
        return self._faces[3]

    @property
    def face_normals(self):
        """Unit normal of each face, outward for ``face_elems[:, 0]``."""
        return self._faces[4]

    @property
    def n_faces(self):
        return self.face_elems.shape[0]

    @cached_property
    def boundary_faces(self):
        return np.flatnonzero(self.face_elems[:, 1] < 0)

    @cached_property
    def elem_normals(self):
        """Outward unit normals (nt, 3, 2), local face i opposite vertex i."""
        vt = self.element_vertices()
        out = np.empty((self.n_elements, 3, 2))
        for i in range(3):
            p = vt[:, (i + 1) % 3]
            q = vt[:, (i + 2) % 3]
            out[:, i] = _edge_normal(p, q)
        return out

    @cached_property
    def elem_flux_sign(self):
        """Sign of beta_T . n_T per local face: -1 inflow, 0 tangential, +1 outflow."""
        bn = np.einsum("kfi,ki->kf", self.elem_normals, self.element_beta)
        scale = np.linalg.norm(self.element_beta, axis=1)[:, None]
        sign = np.sign(bn).astype(np.int64)
        sign[np.abs(bn) <= TANGENT_TOL * scale] = 0
        return sign

    @cached_property
    def neighbors(self):
        """Neighbour across each local face, -1 on the boundary."""
        nb = -np.ones((self.n_elements, 3), dtype=np.int64)
        fe, fl = self.face_elems, self.face_local
        inner = fe[:, 1] >= 0
        nb[fe[inner, 0], fl[inner, 0]] = fe[inner, 1]
        nb[fe[inner, 1], fl[inner, 1]] = fe[inner, 0]
        return nb

    def flux_jump(self):
        """max |[[beta . n_F]]| over interior faces."""
        fe = self.face_elems
        inner = fe[:, 1] >= 0
        n = self.face_normals[inner]
        b0 = self.element_beta[fe[inner, 0]]
        b1 = self.element_beta[fe[inner, 1]]
        jump = np.abs(np.einsum("fi,fi->f", b0 - b1, n))
        return float(jump.max()) if jump.size else 0.0

    def is_flow_aligned(self):
        s = self.elem_flux_sign
        ok = (np.sum(s == 0, axis=1) == 1) & (np.sum(s < 0, axis=1) == 1) & (np.sum(s > 0, axis=1) == 1)
        return bool(np.all(ok))

    def check(self, flow_aligned=True, tol=1e-12):
        """Return a list of violated invariants (empty when valid)."""
        problems = []
        if np.any(self.areas <= 0):
            problems.append("non-positive triangle area")
        scale = max(1.0, float(np.abs(self.element_beta).max(initial=0.0)))
        jump = self.flux_jump()
        if jump > tol * scale:
            problems.append(f"normal flux jump {jump:.3e} exceeds {tol:g}")
        if flow_aligned and not self.is_flow_aligned():
            problems.append("mesh is not flow-aligned")
        return problems

    def locate(self, points, tol=1e-12):
        """Index of a triangle containing each point (-1 if none)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        vt = self.element_vertices()
        a = vt[:, 0]
        e1 = vt[:, 1] - a
        e2 = vt[:, 2] - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        out = -np.ones(pts.shape[0], dtype=np.int64)
        for i, p in enumerate(pts):
            d = p - a
            l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
            l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
            inside = (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
            hit = np.flatnonzero(inside)
            if hit.size:
                out[i] = hit[0]
        return out


def classify_faces(mesh):
    """Tag every face as inflow/outflow/tangential/interior-crossing."""
    fe = mesh.face_elems
    n = mesh.face_normals
    bn = np.einsum("fi,fi->f", mesh.element_beta[fe[:, 0]], n)
    scale = np.linalg.norm(mesh.element_beta[fe[:, 0]], axis=1)
    tags = np.empty(mesh.n_faces, dtype=np.int64)
    for f in range(mesh.n_faces):
        v = bn[f]
        s = scale[f]
        if abs(v) <= TANGENT_TOL * s:
            zero = True
        elif abs(v) <= AMBIGUOUS_TOL * s:
            raise AmbiguousFace(f, v)
        else:
            zero = False
        if fe[f, 1] < 0:
            tags[f] = FaceClass.TANGENTIAL if zero else (FaceClass.OUTFLOW if v > 0 else FaceClass.INFLOW)
        else:
            tags[f] = FaceClass.TANGENTIAL if zero else FaceClass.INTERIOR_CROSSING
    return tags


@dataclass(frozen=True)
class FlowOrder:
    order: np.ndarray
    downstream: np.ndarray = field(repr=False)
    upstream: np.ndarray = field(repr=False)


def flow_order(mesh):
    """Topological order of triangles, downstream before upstream."""
    if not mesh.is_flow_aligned():
        raise InvalidMesh("flow_order needs a flow-aligned mesh")
    classify_faces(mesh)  # rejects ambiguous faces
    sign = mesh.elem_flux_sign
    nb = mesh.neighbors
    nt = mesh.n_elements
    out_face = np.argmax(sign > 0, axis=1)
    in_face = np.argmax(sign < 0, axis=1)
    down = nb[np.arange(nt), out_face]
    up = nb[np.arange(nt), in_face]
    # an element may only be placed after its downstream neighbour
    waiting = (down >= 0).astype(np.int64)
    children = [[] for _ in range(nt)]
    for k in range(nt):
        if down[k] >= 0:
            children[down[k]].append(k)
    stack = [k for k in range(nt) if waiting[k] == 0][::-1]
    order = []
    while stack:
        k = stack.pop()
        order.append(k)
        for c in children[k]:
            waiting[c] -= 1
            if waiting[c] == 0:
                stack.append(c)
    if len(order) != nt:
        raise CycleDetected(f"downstream graph has a cycle through {nt - len(order)} elements")
    return FlowOrder(np.array(order, dtype=np.int64), down, up)


def red_refine_2d(mesh):
    """Split each triangle into four similar children; beta is inherited."""
    v = mesh.vertices
    t = mesh.triangles
    mid = {}
    new_v = [tuple(p) for p in v]

    def midpoint(i, j):
        key = (i, j) if i < j else (j, i)
        m = mid.get(key)
        if m is None:
            m = len(new_v)
            new_v.append(tuple(0.5 * (v[i] + v[j])))
            mid[key] = m
        return m

    tris = []
    for a, b, c in t:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        tris.extend([(a, ab, ca), (ab, b, bc), (ca, bc, c), (bc, ca, ab)])
    beta = np.repeat(mesh.element_beta, 4, axis=0)
    return TriMesh2D(np.array(new_v), np.array(tris), beta)


def flow_aligned_strip_mesh(ncols=4, nrows=4, width=1.0, height=2.0, seed=0, spread=(0.5, 1.5)):
    """Flow-aligned triangulation of (0, width) x (0, height).

    The domain is cut into ``ncols`` strips bounded by polylines running from
    bottom to top; every strip carries the same flux through each of its rows.
    For each interior row a vertical advection speed is drawn per strip from
    ``spread`` (seeded), and the strip widths of that row are set to flux/speed
    and rescaled to fill the row, so realised speeds stay close to the range.
    Bottom and top rows are uniform, which gives beta.n = -1 on the bottom and
    +1 on the top; the outer sides are vertical and tangential.

    Each strip quad is split along its BL-TR diagonal. The lower-right
    triangle advects parallel to the strip's right side and the upper-left one
    parallel to its left side, so each triangle has exactly one tangential
    face.
    """
    rng = np.random.default_rng(seed)
    flux = np.full(ncols, width / ncols)
    xs = np.empty((nrows + 1, ncols + 1))
    for j in range(nrows + 1):
        if j in (0, nrows):
            w = flux.copy()
        else:
            speed = rng.uniform(spread[0], spread[1], size=ncols)
            w = flux / speed
            w *= width / w.sum()
        xs[j] = np.concatenate(([0.0], np.cumsum(w)))
        xs[j, -1] = width
    ys = np.linspace(0.0, height, nrows + 1)
    vid = np.arange((nrows + 1) * (ncols + 1)).reshape(nrows + 1, ncols + 1)
    verts = np.column_stack([xs.ravel(), np.repeat(ys, ncols + 1)])
    tris, beta = [], []
    for j in range(nrows):
        for i in range(ncols):
            bl, br, tl, tr = vid[j, i], vid[j, i + 1], vid[j + 1, i], vid[j + 1, i + 1]
            wb = xs[j, i + 1] - xs[j, i]
            wt = xs[j + 1, i + 1] - xs[j + 1, i]
            right = verts[tr] - verts[br]
            left = verts[tl] - verts[bl]
            tris.append((bl, br, tr))
            beta.append(right * (flux[i] / wb) / right[1])
            tris.append((bl, tr, tl))
            beta.append(left * (flux[i] / wt) / left[1])
    return TriMesh2D(verts, np.array(tris), np.array(beta))


def write_mesh(mesh, path):
    """Plain-text mesh: ``NV NT``, NV lines ``x y``, NT lines ``v0 v1 v2 bx by``."""
    lines = [f"{mesh.vertices.shape[0]} {mesh.n_elements}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {bx:.17g} {by:.17g}"
              for (a, b, c), (bx, by) in zip(mesh.triangles, mesh.element_beta)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    with open(path) as fh:
        rows = [ln.split() for ln in fh if ln.strip()]
    try:
        nv, nt = int(rows[0][0]), int(rows[0][1])
        verts = np.array([[float(x) for x in r[:2]] for r in rows[1:1 + nv]])
        body = rows[1 + nv:1 + nv + nt]
        tris = np.array([[int(x) for x in r[:3]] for r in body], dtype=np.int64)
        beta = np.array([[float(x) for x in r[3:5]] for r in body])
    except (IndexError, ValueError) as exc:
        raise InvalidMesh(f"malformed mesh file {path}: {exc}") from exc
    if verts.shape != (nv, 2) or tris.shape != (nt, 3) or beta.shape != (nt, 2):
        raise InvalidMesh(f"malformed mesh file {path}: counts do not match header")
    return TriMesh2D(verts, tris, beta)
