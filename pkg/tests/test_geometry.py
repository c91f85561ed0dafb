import math

import numpy as np
import pytest

import gradedfem as gf
from gradedfem.geometry import GeometryError

from conftest import full_square_amesh, sector_amesh


def test_mesh_counts_exact_tiling():
    m = gf.build_reference_mesh(1.0)
    assert (m.nx, m.ny) == (2, 2)
    m = gf.build_reference_mesh(0.5)
    assert (m.nx, m.ny) == (4, 4)


def test_mesh_counts_with_shift():
    # per-axis count = ceil((2 + shift) / h)
    m = gf.build_reference_mesh(0.4, (0.1, 0.0))
    assert (m.nx, m.ny) == (6, 5)
    assert m.x0 + m.nx * m.h >= 1.0
    assert m.y0 + m.ny * m.h >= 1.0


@pytest.mark.parametrize("h", [0.0, -0.1, 1.5])
def test_mesh_invalid_h(h):
    with pytest.raises(GeometryError):
        gf.build_reference_mesh(h)


def test_mesh_invalid_shift():
    with pytest.raises(GeometryError):
        gf.build_reference_mesh(0.5, (0.5, 0.0))


def test_polygon_validation():
    with pytest.raises(GeometryError):
        gf.PolygonDomain([(0, 0), (1, 0), (1, 1), (0, 1)][::-1])  # clockwise
    with pytest.raises(GeometryError):
        gf.PolygonDomain([(0, 0), (2, 0), (2, 1)])  # outside the square
    with pytest.raises(GeometryError):  # corner not at origin
        gf.PolygonDomain([(0.5, 0.5), (1, 0.5), (1, 1)], corner_index=0)
    with pytest.raises(GeometryError):  # self-intersecting
        gf.PolygonDomain([(0, 0), (1, 1), (1, 0), (0, 1)])


def test_polygon_json_roundtrip():
    dom = gf.sector_polygon(1.5 * math.pi, n_arc=64)
    again = gf.PolygonDomain.from_json(dom.to_json())
    assert np.allclose(again.vertices, dom.vertices)
    assert again.corner_index == dom.corner_index


def test_classify_full_square():
    am = full_square_amesh(0.5)
    assert len(am.active_cells) == 16
    assert len(am.cut_cells) == 0
    assert len(am.ghost_faces) == 0


def test_classify_half_plane():
    # vertical boundary at x = 0.25 cuts the right column of a 2x2 grid
    dom = gf.PolygonDomain([(-1, -1), (0.25, -1), (0.25, 1), (-1, 1)])
    am = gf.classify_elements(gf.build_reference_mesh(1.0), dom)
    assert set(am.active_cells) == {0, 1, 2, 3}
    # membership oracle: cells with corners on both sides of x=0.25 are cut
    expected_cut = set()
    for c in range(4):
        x0, y0, x1, y1 = am.mesh.cell_bounds(c)
        corners_in = [x <= 0.25 for x in (x0, x1)]
        if any(corners_in) and not all(corners_in):
            expected_cut.add(c)
    assert set(am.cut_cells) == expected_cut == {1, 3}


def test_classify_sector_sampling_oracle():
    omega = 1.5 * math.pi
    am = sector_amesh(0.5, omega=omega)
    dom = am.domain
    g = (np.arange(100) + 0.5) / 100.0
    for c in range(am.mesh.n_cells):
        x0, y0, x1, y1 = am.mesh.cell_bounds(c)
        X, Y = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g)
        frac = dom.contains_points(np.column_stack([X.ravel(), Y.ravel()])).mean()
        if 0.02 < frac < 0.98:
            assert am.is_cut(c), f"cell {c} mixed by sampling but not cut"
        if frac == 1.0:
            assert am.is_active(c)
        if frac == 0.0:
            assert c not in set(am.inside_cells)


def test_classify_invariant_under_vertex_relabeling():
    am = sector_amesh(0.4)
    rotated = am.domain.with_start_vertex(7)
    am2 = gf.classify_elements(am.mesh, rotated)
    assert np.array_equal(am.active_cells, am2.active_cells)
    assert np.array_equal(am.cut_cells, am2.cut_cells)
    assert [f.cells for f in am.ghost_faces] == [f.cells for f in am2.ghost_faces]


def test_ghost_faces_unique_and_adjacent():
    am = sector_amesh(0.25)
    seen = set()
    for f in am.ghost_faces:
        assert f.cells not in seen
        seen.add(f.cells)
        c1, c2 = f.cells
        assert am.is_active(c1) and am.is_active(c2)
        assert am.is_cut(c1) or am.is_cut(c2)
        ix1, iy1 = am.mesh.cell_ij(c1)
        ix2, iy2 = am.mesh.cell_ij(c2)
        assert abs(ix1 - ix2) + abs(iy1 - iy2) == 1


def test_clip_interior_cell_exact_area():
    am = full_square_amesh(0.5)
    q = gf.clip_element(am, int(am.active_cells[5]), 3)
    assert q.weights.sum() == pytest.approx(0.25, rel=1e-14)
    assert (q.weights > 0).all()


def test_clip_half_covered_cell():
    # straight edge through the cell midline
    dom = gf.PolygonDomain([(-1, -1), (0.25, -1), (0.25, 1), (-1, 1)])
    am = gf.classify_elements(gf.build_reference_mesh(0.5), dom)
    cell = am.mesh.cell_of_point((0.15, 0.15))  # cell [0, 0.5]^2, half covered
    assert am.is_cut(cell)
    q = gf.clip_element(am, cell, 3)
    assert q.weights.sum() == pytest.approx(0.125, rel=1e-12)


def test_clip_arc_cell_against_monte_carlo():
    am = sector_amesh(0.5)
    cell = am.mesh.cell_of_point((0.75, 0.25))  # crossed by the arc
    assert am.is_cut(cell)
    q = gf.clip_element(am, cell, 4)
    rng = np.random.default_rng(7)
    x0, y0, x1, y1 = am.mesh.cell_bounds(cell)
    pts = rng.uniform((x0, y0), (x1, y1), size=(10**6, 2))
    mc = am.domain.contains_points(pts).mean() * (x1 - x0) * (y1 - y0)
    assert q.weights.sum() == pytest.approx(mc, rel=2e-3)


def test_clip_area_sums_to_polygon_area():
    am = sector_amesh(0.25)
    total = sum(gf.clip_element(am, int(c), 3).weights.sum()
                for c in am.active_cells)
    assert total == pytest.approx(am.domain.area, rel=1e-10)


def test_clip_nodes_inside_cell_and_domain():
    am = sector_amesh(0.25)
    for c in am.cut_cells[:10]:
        q = gf.clip_element(am, int(c), 3)
        x0, y0, x1, y1 = am.mesh.cell_bounds(int(c))
        assert (q.points[:, 0] >= x0 - 1e-12).all() and (q.points[:, 0] <= x1 + 1e-12).all()
        assert (q.points[:, 1] >= y0 - 1e-12).all() and (q.points[:, 1] <= y1 + 1e-12).all()
        dist = am.domain.shape.boundary.distance
        from shapely.geometry import Point
        inside = am.domain.contains_points(q.points)
        for pt, ok in zip(q.points, inside):
            assert ok or dist(Point(pt)) < 1e-9


def test_clip_inactive_cell_raises():
    am = sector_amesh(0.5)
    inactive = sorted(set(range(am.mesh.n_cells)) - set(int(c) for c in am.active_cells))
    with pytest.raises(GeometryError):
        gf.clip_element(am, inactive[0], 3)


def test_boundary_straight_edge_length():
    dom = gf.PolygonDomain([(-1, -1), (0.25, -1), (0.25, 1), (-1, 1)])
    am = gf.classify_elements(gf.build_reference_mesh(0.5), dom)
    total = sum(gf.boundary_quadrature(am, c, 3).weights.sum()
                for c in am.boundary_cells)
    assert total == pytest.approx(dom.perimeter, rel=1e-12)


def test_boundary_arc_length_matches_analytic():
    # unit circle polygonized at 1e4 vertices; one cell sees theta in [pi/6, pi/3]
    ang = np.linspace(0.0, 2 * math.pi, 10**4, endpoint=False)
    circle = gf.PolygonDomain(np.column_stack([np.cos(ang), np.sin(ang)]))
    am = gf.classify_elements(gf.build_reference_mesh(0.5), circle)
    cell = am.mesh.cell_of_point((0.75, 0.75))
    bq = gf.boundary_quadrature(am, cell, 4)
    assert bq.weights.sum() == pytest.approx(math.pi / 6, rel=1e-6)


def test_boundary_normal_orientation_example():
    # edge from (0,0) to (1,0) with the domain above: outward normal (0,-1)
    dom = gf.PolygonDomain([(0, 0), (1, 0), (1, 1), (0, 1)])
    am = gf.classify_elements(gf.build_reference_mesh(0.5), dom)
    found = False
    for c in am.boundary_cells:
        bq = gf.boundary_quadrature(am, c, 3)
        on_bottom = np.abs(bq.points[:, 1]) < 1e-12
        if on_bottom.any():
            found = True
            assert np.allclose(bq.normals[on_bottom], (0.0, -1.0))
    assert found


def test_boundary_normals_march_out_of_domain():
    am = sector_amesh(0.25)
    eps = 1e-7
    for c in am.boundary_cells:
        bq = gf.boundary_quadrature(am, c, 3)
        assert np.allclose(np.hypot(bq.normals[:, 0], bq.normals[:, 1]), 1.0)
        out = am.domain.contains_points(bq.points + eps * bq.normals)
        inn = am.domain.contains_points(bq.points - eps * bq.normals)
        assert not out.any()
        assert inn.all()


def test_boundary_quadrature_requires_boundary():
    am = sector_amesh(0.25)
    interior_only = sorted(set(int(c) for c in am.inside_cells)
                           - set(am.boundary_cells))
    with pytest.raises(GeometryError):
        gf.boundary_quadrature(am, interior_only[0], 3)


def test_corner_centered_shift():
    for h in (0.4, 0.2, 0.1, 0.05):
        s = gf.corner_centered_shift(h)
        m = gf.build_reference_mesh(h, s)
        # origin sits at the center of some cell
        c = m.cell_of_point((0.0, 0.0))
        x0, y0, x1, y1 = m.cell_bounds(c)
        assert 0.5 * (x0 + x1) == pytest.approx(0.0, abs=1e-12)
        assert 0.5 * (y0 + y1) == pytest.approx(0.0, abs=1e-12)
