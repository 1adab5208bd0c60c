import numpy as np
import pytest

from aetpipe.mesh import (MeshError, TriMesh, build_disk_mesh, load_mesh,
                          refine_nested, save_mesh, validate_mesh)


def test_paper_resolution_vertex_count():
    mesh = build_disk_mesh(0.02, 1.0, 0.0)
    assert 6000 <= mesh.vertex_count <= 10000
    assert mesh.vertex_count == 7651  # 1 + 3n(n+1) at n = 50


def test_invariants_hold_on_coarse_mesh(disk_h02):
    assert np.all(disk_h02.areas() > 0)
    b = np.unique(disk_h02.boundary_edges)
    radii = np.linalg.norm(disk_h02.vertices[b], axis=1)
    assert np.abs(radii - 1.0).max() <= 1e-9
    validate_mesh(disk_h02)


def test_quarter_view_arc_length():
    mesh = build_disk_mesh(0.2, 0.25, 0.0)
    edge_len = 2.0 * np.sin(np.pi / len(mesh.boundary_edges))
    assert abs(mesh.gamma1_arc_length() - np.pi / 2) <= edge_len


def test_gamma1_is_contiguous_and_partitions_boundary():
    mesh = build_disk_mesh(0.15, 0.5, 1.0)
    flags = mesh.gamma1_edge
    assert flags.any() and not flags.all()
    assert int(np.sum(flags != np.roll(flags, 1))) == 2
    # partition: every boundary edge is either Gamma_1 or Gamma_2
    assert len(flags) == len(mesh.boundary_edges)


def test_full_view_marks_everything():
    mesh = build_disk_mesh(0.2, 1.0, 0.0)
    assert mesh.gamma1_edge.all()
    assert mesh.gamma1_mask[np.unique(mesh.boundary_edges)].all()


def test_rejects_bad_parameters():
    with pytest.raises(MeshError):
        build_disk_mesh(0.0)
    with pytest.raises(MeshError):
        build_disk_mesh(0.7)
    with pytest.raises(MeshError):
        build_disk_mesh(0.2, view_fraction=0.0)
    with pytest.raises(MeshError):
        build_disk_mesh(0.2, view_fraction=1.5)


def test_min_angle_quality():
    for h, frac in [(0.2, 1.0), (0.06, 0.125), (0.05, 1.0)]:
        mesh = build_disk_mesh(h, frac, 0.3)
        assert mesh.min_angle_deg() >= 20.0


def test_determinism():
    a = build_disk_mesh(0.13, 0.25, 0.7)
    b = build_disk_mesh(0.13, 0.25, 0.7)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)
    assert np.array_equal(a.gamma1_edge, b.gamma1_edge)


class TestRefinement:
    def test_one_to_four(self, disk_h02, nested_h01):
        pair = refine_nested(disk_h02)
        assert pair.fine.triangle_count == 4 * disk_h02.triangle_count

    def test_injection_exact(self, nested_h01):
        c, f = nested_h01.coarse, nested_h01.fine
        diff = np.abs(f.vertices[nested_h01.injection] - c.vertices)
        assert diff.max() <= 1e-12

    def test_paper_scale_dof_counts(self):
        coarse = build_disk_mesh(0.02, 1.0, 0.0)
        pair = refine_nested(coarse)
        assert 25000 <= pair.fine.vertex_count <= 35000

    def test_area_growth_and_circle_deficit(self, disk_h02):
        pair = refine_nested(disk_h02)
        a_c, a_f = disk_h02.area(), pair.fine.area()
        assert a_f >= a_c
        assert np.pi - a_f < np.pi - a_c
        assert np.pi - a_c <= 0.2**2  # inscribed-polygon deficit is O(h^2)

    def test_gamma1_consistent_after_refinement(self):
        coarse = build_disk_mesh(0.2, 0.25, 0.0)
        fine = refine_nested(coarse).fine
        assert abs(fine.gamma1_arc_length() - np.pi / 2) <= \
            2.0 * np.sin(np.pi / len(fine.boundary_edges))


class TestFileFormat:
    def test_round_trip(self, tmp_path, disk_h02):
        p = tmp_path / "m.txt"
        save_mesh(disk_h02, p)
        loaded = load_mesh(p)
        assert np.array_equal(loaded.vertices, disk_h02.vertices)
        assert np.array_equal(loaded.triangles, disk_h02.triangles)
        assert np.array_equal(loaded.boundary_edges, disk_h02.boundary_edges)
        assert np.array_equal(loaded.gamma1_edge, disk_h02.gamma1_edge)
        p2 = tmp_path / "m2.txt"
        save_mesh(loaded, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_header_check(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("not a mesh\n")
        with pytest.raises(MeshError):
            load_mesh(p)


class TestValidation:
    def test_duplicate_vertices_rejected(self):
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
        bad = TriMesh(verts, np.array([[0, 1, 2]]),
                      np.empty((0, 2), dtype=int), np.empty(0),
                      np.empty(0, dtype=bool), np.zeros(4, dtype=bool))
        with pytest.raises(MeshError, match="duplicate"):
            validate_mesh(bad)

    def test_flipped_triangle_rejected(self, disk_h02):
        tris = disk_h02.triangles.copy()
        tris[0] = tris[0][[0, 2, 1]]
        bad = TriMesh(disk_h02.vertices, tris, disk_h02.boundary_edges,
                      disk_h02.boundary_t, disk_h02.gamma1_edge,
                      disk_h02.gamma1_mask)
        with pytest.raises(MeshError, match="area"):
            validate_mesh(bad)

    def test_split_gamma1_rejected(self, disk_h02):
        flags = disk_h02.gamma1_edge.copy()
        flags[:] = False
        flags[0] = flags[2] = True  # two disjoint arcs
        bad = TriMesh(disk_h02.vertices, disk_h02.triangles,
                      disk_h02.boundary_edges, disk_h02.boundary_t,
                      flags, disk_h02.gamma1_mask)
        with pytest.raises(MeshError, match="contiguous"):
            validate_mesh(bad)
