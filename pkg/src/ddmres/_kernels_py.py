"""Pure-Python versions of the mesh-sweep kernels (fallback for _kernels.pyx)."""
import numpy as np

from .errors import InconsistentTrace


def face_roles(sign):
    """Local (inflow, outflow, tangential) face of every flow-aligned triangle."""
    fin = np.argmax(sign < 0, axis=1)
    fout = np.argmax(sign > 0, axis=1)
    ftan = np.argmax(sign == 0, axis=1)
    return fin.astype(np.int64), fout.astype(np.int64), ftan.astype(np.int64)


def chain_lengths(order, up):
    """Number of elements on the upstream chain of each triangle (itself included)."""
    n = np.zeros(up.size, dtype=np.int64)
    for k in order[::-1]:
        u = up[k]
        n[k] = 1 if u < 0 else n[u] + 1
    return n


def p1conf_sweep(order, up, tris, verts, beta, sign):
    """Vertex values of every P1-conf basis function along its upstream chain.

    For each element T the chain T, up(T), up(up(T)), ... is walked. On T the
    outflow face carries zero and the remaining vertex gets the travel time
    along the tangential edge; upstream elements copy their outflow-face
    values from the element below and repeat the value along their
    tangential edge.

    Returns ``(indptr, elems, vals)`` with ``vals`` of shape (nnz, 3).
    """
    fin, fout, ftan = face_roles(sign)
    nt = tris.shape[0]
    lengths = chain_lengths(order, up)
    indptr = np.zeros(nt + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    elems = np.empty(indptr[-1], dtype=np.int64)
    vals = np.empty((indptr[-1], 3))
    tau = np.empty(nt)
    for k in range(nt):
        a = verts[tris[k, fout[k]]]  # vertex opposite the outflow face
        p = verts[tris[k, fin[k]]]  # vertex opposite the inflow face
        tau[k] = np.hypot(*(a - p)) / np.hypot(*beta[k])
    for t in range(nt):
        pos = indptr[t]
        k = t
        known = {}
        while k >= 0:
            tri = tris[k]
            out_a, out_b = tri[(fout[k] + 1) % 3], tri[(fout[k] + 2) % 3]
            if k == t:
                va = vb = 0.0
            else:
                if out_a not in known or out_b not in known:
                    raise InconsistentTrace(f"outflow face of element {k} does not match its downstream inflow face")
                va, vb = known[out_a], known[out_b]
            row = vals[pos]
            row[(fout[k] + 1) % 3] = va
            row[(fout[k] + 2) % 3] = vb
            # the vertex opposite the inflow face lies on the outflow face
            vp = va if tri[fin[k]] == out_a else vb
            row[fout[k]] = vp + (tau[k] if k == t else 0.0)
            elems[pos] = k
            known = {tri[0]: row[0], tri[1]: row[1], tri[2]: row[2]}
            pos += 1
            k = up[k]
    return indptr, elems, vals


def backtrace_maps(order, up, tris, verts, beta, sign):
    """Affine maps (nt, 2, 3) sending a point of each element to its inflow-boundary foot.

    Inside element K the characteristic runs backward along beta_K to K's
    inflow face; the map of K is the map of its upstream neighbour composed
    with that projection.
    """
    fin, _, _ = face_roles(sign)
    nt = tris.shape[0]
    maps = np.empty((nt, 2, 3))
    for k in order[::-1]:
        tri = tris[k]
        q1 = verts[tri[(fin[k] + 1) % 3]]
        q2 = verts[tri[(fin[k] + 2) % 3]]
        d = q2 - q1
        n = np.array([d[1], -d[0]])
        b = beta[k]
        nb = n @ b
        proj = np.eye(2) - np.outer(b, n) / nb
        shift = b * (n @ q1) / nb
        own = np.column_stack([proj, shift])
        u = up[k]
        if u < 0:
            maps[k] = own
        else:
            prev = maps[u]
            maps[k, :, :2] = prev[:, :2] @ proj
            maps[k, :, 2] = prev[:, :2] @ shift + prev[:, 2]
    return maps
