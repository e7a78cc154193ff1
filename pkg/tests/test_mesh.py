import numpy as np
import pytest

from ddmres import (FaceClass, Mesh1D, TriMesh2D, classify_faces, flow_aligned_strip_mesh,
                    flow_order, read_mesh, red_refine_2d, refine_uniform_1d, uniform_mesh_1d,
                    write_mesh)
from ddmres.errors import AmbiguousFace, CycleDetected, InvalidInterval, InvalidMesh


def test_uniform_bisection():
    assert np.array_equal(uniform_mesh_1d(-1, 1, 2).nodes, [-1.0, 0.0, 1.0])


def test_uniform_spacing():
    assert np.allclose(uniform_mesh_1d(0, 1, 4).h, 0.25, rtol=0, atol=1e-15)


def test_uniform_sixteen():
    m = uniform_mesh_1d(0, 1, 16)
    assert m.nodes.size == 17
    assert m.h[0] == pytest.approx(1 / 16)


@pytest.mark.parametrize("a,b,n", [(1, 1, 2), (2, 1, 3), (0, 1, 0)])
def test_uniform_rejects(a, b, n):
    with pytest.raises(InvalidInterval):
        uniform_mesh_1d(a, b, n)


def test_mesh1d_invariants():
    with pytest.raises(InvalidMesh):
        Mesh1D([0.0])
    with pytest.raises(InvalidMesh):
        Mesh1D([0.0, 0.5, 0.5, 1.0])


def test_refine_once_matches_uniform():
    assert refine_uniform_1d(uniform_mesh_1d(0, 1, 2), 1) == uniform_mesh_1d(0, 1, 4)


def test_refine_zero_levels_is_identity():
    m = uniform_mesh_1d(0, 1, 2)
    assert refine_uniform_1d(m, 0) == m


def test_refine_to_256():
    fine = refine_uniform_1d(uniform_mesh_1d(0, 1, 16), 4)
    assert fine.n_elements == 256
    assert np.allclose(fine.h, 1 / 256, atol=1e-15)


def test_refine_keeps_nodes(rng):
    m = Mesh1D(np.sort(rng.uniform(0, 1, 9)))
    fine = refine_uniform_1d(m, 3)
    assert np.all(np.isin(m.nodes, fine.nodes))
    assert fine.measure() == pytest.approx(m.measure(), abs=1e-12)
    with pytest.raises(ValueError):
        refine_uniform_1d(m, -1)


def test_locate_sends_nodes_left():
    m = uniform_mesh_1d(0, 1, 4)
    assert list(m.locate([0.0, 0.25, 0.3, 1.0])) == [0, 0, 1, 3]


def _one_triangle(beta=(0.0, 1.0)):
    return TriMesh2D([(0, 0), (1, 0), (0, 1)], [(0, 1, 2)], [beta])


def test_red_refine_single_triangle():
    m = _one_triangle()
    r = red_refine_2d(m)
    assert r.n_elements == 4
    assert r.measure() == pytest.approx(m.measure(), abs=1e-14)
    assert np.all(r.element_beta == m.element_beta[0])


def test_red_refine_keeps_flow_alignment(strip_mesh):
    assert strip_mesh.check() == []
    r = red_refine_2d(strip_mesh)
    assert r.check() == []


def test_red_refine_twice_counts(strip_mesh):
    r = red_refine_2d(red_refine_2d(strip_mesh))
    assert r.n_elements == 16 * strip_mesh.n_elements
    assert r.measure() == pytest.approx(2.0, abs=1e-12)


def test_bottom_edge_inflow_then_tangential():
    # face opposite vertex 2 of (0,0),(1,0),(0,1) is the bottom edge
    for beta, tag in (((0.0, 1.0), FaceClass.INFLOW), ((1.0, 0.0), FaceClass.TANGENTIAL)):
        m = _one_triangle(beta)
        fv = m.face_vertices
        bottom = [f for f in range(m.n_faces) if set(fv[f]) == {0, 1}][0]
        assert classify_faces(m)[bottom] == tag


def test_strip_boundary_classes(strip_mesh):
    m = strip_mesh
    tags = classify_faces(m)
    mids = m.vertices[m.face_vertices].mean(axis=1)
    for f in m.boundary_faces:
        x, y = mids[f]
        if np.isclose(y, 0.0):
            want = FaceClass.INFLOW
        elif np.isclose(y, 2.0):
            want = FaceClass.OUTFLOW
        else:
            assert np.isclose(x, 0.0) or np.isclose(x, 1.0)
            want = FaceClass.TANGENTIAL
        assert tags[f] == want
    # beta.n is -1 on the bottom and +1 on the top
    fe = m.face_elems[:, 0]
    bn = np.einsum("fi,fi->f", m.element_beta[fe], m.face_normals)
    assert np.allclose(bn[tags == FaceClass.INFLOW], -1.0)
    assert np.allclose(bn[tags == FaceClass.OUTFLOW], 1.0)


def test_ambiguous_face_reported():
    m = _one_triangle((1.0, 1e-10))
    with pytest.raises(AmbiguousFace) as err:
        classify_faces(m)
    assert err.value.face >= 0


def test_flow_order_singleton():
    m = TriMesh2D([(0, 0), (1, 0), (1, 1)], [(0, 1, 2)], [(0.0, 1.0)])
    assert m.is_flow_aligned()
    assert list(flow_order(m).order) == [0]


def test_flow_order_stacked(stacked_pair):
    assert list(flow_order(stacked_pair).order) == [1, 0]


def _check_order(m):
    fo = flow_order(m)
    pos = np.empty(m.n_elements, dtype=int)
    pos[fo.order] = np.arange(m.n_elements)
    for k in range(m.n_elements):
        d = fo.downstream[k]
        if d >= 0:
            assert pos[d] < pos[k]


def test_flow_order_strip(strip_mesh):
    _check_order(strip_mesh)
    _check_order(red_refine_2d(strip_mesh))


def test_flow_order_cycle():
    # a ring of triangles circulating around a hole cannot be ordered
    n = 6
    ang = 2 * np.pi * np.arange(n) / n
    inner = np.column_stack([np.cos(ang), np.sin(ang)])
    outer = 2 * np.column_stack([np.cos(ang + np.pi / n), np.sin(ang + np.pi / n)])
    verts = np.vstack([inner, outer])
    tris, beta = [], []
    for i in range(n):
        j = (i + 1) % n
        a, b, c = i, j, n + i
        tris.append((a, b, c))
        beta.append(inner[j] - inner[i])
        tris.append((b, n + j, c))
        beta.append(outer[j] - outer[i])
    m = TriMesh2D(verts, tris, beta, check=True)
    if not m.is_flow_aligned():
        pytest.skip("ring construction is not flow-aligned")
    with pytest.raises(CycleDetected):
        flow_order(m)


def test_flow_order_needs_alignment():
    m = _one_triangle((1.0, 1.0))
    with pytest.raises(InvalidMesh):
        flow_order(m)


def test_measure_sum(strip_mesh):
    assert strip_mesh.measure() == pytest.approx(2.0, abs=1e-12)
    assert uniform_mesh_1d(-1, 1, 7).measure() == pytest.approx(2.0, abs=1e-12)


def test_flux_continuity(strip_mesh):
    assert strip_mesh.flux_jump() <= 1e-12


def test_mesh_file_roundtrip(tmp_path, strip_mesh):
    path = tmp_path / "strip.mesh"
    write_mesh(strip_mesh, path)
    back = read_mesh(path)
    assert np.array_equal(back.vertices, strip_mesh.vertices)
    assert np.array_equal(back.triangles, strip_mesh.triangles)
    assert np.array_equal(back.element_beta, strip_mesh.element_beta)


def test_mesh_file_malformed(tmp_path):
    path = tmp_path / "bad.mesh"
    path.write_text("3 1\n0 0\n1 0\n")
    with pytest.raises(InvalidMesh):
        read_mesh(path)


def test_strip_mesh_seeded():
    a = flow_aligned_strip_mesh(4, 4, seed=3)
    b = flow_aligned_strip_mesh(4, 4, seed=3)
    c = flow_aligned_strip_mesh(4, 4, seed=4)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.vertices, c.vertices)


def test_negative_area_triangle_reoriented():
    m = TriMesh2D([(0, 0), (0, 1), (1, 0)], [(0, 1, 2)], [(0.0, 1.0)])
    assert m.areas[0] > 0
