# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled mesh-sweep kernels; same contracts as _kernels_py."""
import numpy as np
cimport numpy as cnp
from libc.math cimport hypot

from .errors import InconsistentTrace
from ._kernels_py import face_roles, chain_lengths

cnp.import_array()


def p1conf_sweep(order, up, tris, verts, beta, sign):
    cdef cnp.int64_t[:] fin, fout
    fin_a, fout_a, _ = face_roles(sign)
    fin = fin_a
    fout = fout_a
    cdef const cnp.int64_t[:] up_v = np.ascontiguousarray(up, dtype=np.int64)
    cdef const cnp.int64_t[:, :] tri = np.ascontiguousarray(tris, dtype=np.int64)
    cdef const double[:, :] vx = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[:, :] bt = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t nt = tri.shape[0]
    lengths = chain_lengths(np.asarray(order), np.asarray(up_v))
    indptr_a = np.zeros(nt + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr_a[1:])
    cdef cnp.int64_t[:] indptr = indptr_a
    elems_a = np.empty(indptr_a[-1], dtype=np.int64)
    vals_a = np.empty((indptr_a[-1], 3))
    cdef cnp.int64_t[:] elems = elems_a
    cdef double[:, :] vals = vals_a
    cdef double[:] tau = np.empty(nt)
    cdef Py_ssize_t k, t, pos, ia, ib, ip, la, lb, fo, j
    cdef cnp.int64_t prev_k, ga, gb
    cdef double va, vb, vp
    for k in range(nt):
        ia = tri[k, fout[k]]
        ip = tri[k, fin[k]]
        tau[k] = hypot(vx[ia, 0] - vx[ip, 0], vx[ia, 1] - vx[ip, 1]) / hypot(bt[k, 0], bt[k, 1])
    for t in range(nt):
        pos = indptr[t]
        k = t
        prev_k = -1
        while k >= 0:
            fo = fout[k]
            la = (fo + 1) % 3
            lb = (fo + 2) % 3
            ga = tri[k, la]
            gb = tri[k, lb]
            if prev_k < 0:
                va = 0.0
                vb = 0.0
            else:
                va = vb = 0.0
                ia = -1
                ib = -1
                for j in range(3):
                    if tri[prev_k, j] == ga:
                        ia = j
                    if tri[prev_k, j] == gb:
                        ib = j
                if ia < 0 or ib < 0:
                    raise InconsistentTrace(
                        f"outflow face of element {k} does not match its downstream inflow face")
                va = vals[pos - 1, ia]
                vb = vals[pos - 1, ib]
            vals[pos, la] = va
            vals[pos, lb] = vb
            vp = va if tri[k, fin[k]] == ga else vb
            vals[pos, fo] = vp + (tau[k] if k == t else 0.0)
            elems[pos] = k
            pos += 1
            prev_k = k
            k = up_v[k]
    return indptr_a, elems_a, vals_a


def backtrace_maps(order, up, tris, verts, beta, sign):
    fin_a, _, _ = face_roles(sign)
    cdef cnp.int64_t[:] fin = fin_a
    cdef const cnp.int64_t[:] up_v = np.ascontiguousarray(up, dtype=np.int64)
    cdef const cnp.int64_t[:] ord_v = np.ascontiguousarray(order, dtype=np.int64)
    cdef const cnp.int64_t[:, :] tri = np.ascontiguousarray(tris, dtype=np.int64)
    cdef const double[:, :] vx = np.ascontiguousarray(verts, dtype=np.float64)
    cdef const double[:, :] bt = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t nt = tri.shape[0]
    maps_a = np.empty((nt, 2, 3))
    cdef double[:, :, :] maps = maps_a
    cdef Py_ssize_t i, k, u, r
    cdef cnp.int64_t i1, i2
    cdef double nx, ny, nb, p00, p01, p10, p11, s0, s1, c
    for i in range(nt - 1, -1, -1):
        k = ord_v[i]
        i1 = tri[k, (fin[k] + 1) % 3]
        i2 = tri[k, (fin[k] + 2) % 3]
        nx = vx[i2, 1] - vx[i1, 1]
        ny = -(vx[i2, 0] - vx[i1, 0])
        nb = nx * bt[k, 0] + ny * bt[k, 1]
        p00 = 1.0 - bt[k, 0] * nx / nb
        p01 = -bt[k, 0] * ny / nb
        p10 = -bt[k, 1] * nx / nb
        p11 = 1.0 - bt[k, 1] * ny / nb
        c = (nx * vx[i1, 0] + ny * vx[i1, 1]) / nb
        s0 = bt[k, 0] * c
        s1 = bt[k, 1] * c
        u = up_v[k]
        if u < 0:
            maps[k, 0, 0] = p00
            maps[k, 0, 1] = p01
            maps[k, 0, 2] = s0
            maps[k, 1, 0] = p10
            maps[k, 1, 1] = p11
            maps[k, 1, 2] = s1
        else:
            for r in range(2):
                maps[k, r, 0] = maps[u, r, 0] * p00 + maps[u, r, 1] * p10
                maps[k, r, 1] = maps[u, r, 0] * p01 + maps[u, r, 1] * p11
                maps[k, r, 2] = maps[u, r, 0] * s0 + maps[u, r, 1] * s1 + maps[u, r, 2]
    return maps_a
