import math

import numpy as np
import pytest

import gradedfem as gf
from gradedfem.splines import (SpaceError, build_dof_map, detect_slit,
                               ders_basis_funs, greville_interpolant,
                               open_knot_vector, split_disjoint_supports)

from conftest import full_square_amesh, sector_amesh


def test_dof_counts_uncut_grid():
    am = full_square_amesh(0.5)  # 4x4 cells
    assert gf.build_space(am, 1, 0).n_dofs == 25     # (cells+1)^2
    assert gf.build_space(am, 2, 1).n_dofs == 36     # (cells+p)^2
    assert gf.build_space(am, 2, 0).n_dofs == 81     # (2*cells+1)^2


def test_invalid_regularity():
    am = full_square_amesh(0.5)
    with pytest.raises(SpaceError):
        gf.build_space(am, 2, 2)
    with pytest.raises(SpaceError):
        gf.build_space(am, 2, -1)


def test_quadratic_midspan_values():
    # uniform interior span: central basis 3/4, neighbors 1/8
    U = open_knot_vector(np.linspace(0.0, 5.0, 6), 2, 1)
    vals = ders_basis_funs(4, np.array([2.5]), 2, U, 0)[0, :, 0]
    assert np.allclose(vals, [0.125, 0.75, 0.125])


@pytest.mark.parametrize("p,r", [(1, 0), (2, 1), (2, 0), (3, 2)])
def test_partition_of_unity_and_derivative_sums(p, r):
    am = sector_amesh(0.25)
    space = gf.build_space(am, p, r)
    rng = np.random.default_rng(5)
    pts = rng.uniform(-0.9, 0.9, (10_000, 2))
    pts = pts[am.domain.contains_points(pts)]
    for c in np.unique([am.mesh.cell_of_point(pt) for pt in pts]):
        sel = pts[[am.mesh.cell_of_point(pt) == c for pt in pts]]
        if not am.is_active(int(c)):
            continue
        ders = space.eval_cell(int(c), sel, 1)
        assert np.allclose(ders[0, 0].sum(axis=0), 1.0, atol=1e-12)
        assert np.allclose(ders[1, 0].sum(axis=0), 0.0, atol=1e-10)
        assert np.allclose(ders[0, 1].sum(axis=0), 0.0, atol=1e-10)


def test_basis_eval_point_api():
    am = sector_amesh(0.5)
    space = gf.build_space(am, 2, 1)
    be = gf.eval_basis(space, (0.3, 0.4), max_deriv=2)
    assert be.values.sum() == pytest.approx(1.0)
    assert len(be.local_dofs) == 9
    assert (2, 0) in be.derivs and (1, 1) in be.derivs
    with pytest.raises(SpaceError):
        gf.eval_basis(space, (0.9, -0.9), 1)  # inside the void


def test_polynomial_reproduction():
    am = sector_amesh(0.25)
    for p, r in ((1, 0), (2, 1), (2, 0)):
        space = gf.build_space(am, p, r)

        def poly(P):
            out = (1.0 + P[:, 0] - 0.5 * P[:, 1]) ** p
            return out

        co = greville_interpolant(space, poly)
        rng = np.random.default_rng(2)
        pts = rng.uniform(-0.7, 0.7, (500, 2))
        pts = pts[am.domain.contains_points(pts)]
        for pt in pts[:100]:
            be = space.eval_point(pt, 0)
            assert co[be.local_dofs] @ be.values == pytest.approx(
                poly(pt[None, :])[0], abs=1e-12)


def test_constant_interpolant_has_zero_derivatives():
    am = full_square_amesh(0.5)
    space = gf.build_space(am, 2, 1)
    co = greville_interpolant(space, lambda P: np.full(len(P), 3.5))
    be = space.eval_point((0.21, -0.37), 2)
    for d, vals in be.derivs.items():
        assert abs(co[be.local_dofs] @ vals) < 1e-12


def test_split_identity_on_convex_domain():
    am = full_square_amesh(0.5)
    space = gf.build_space(am, 2, 1)
    dm = split_disjoint_supports(space)
    assert dm.n_dofs == space.n_dofs
    for c in am.active_cells:
        assert np.array_equal(dm.cell_dofs[int(c)],
                              space.dof_map.cell_dofs[int(c)])


def test_split_never_decreases_and_is_idempotent():
    am = sector_amesh(0.1, omega=0.97 * 2 * math.pi)
    space = gf.build_space(am, 2, 1)
    base = space.n_dofs
    dm = split_disjoint_supports(space)
    assert dm.n_dofs >= base
    space.dof_map = dm
    again = split_disjoint_supports(space)
    assert again.n_dofs == dm.n_dofs


def test_split_finds_two_dofs_across_slit():
    # narrow void: basis functions bridging it split into two components
    omega = 0.97 * 2 * math.pi
    am = sector_amesh(0.1, omega=omega)
    space = gf.build_space(am, 2, 1)
    dm = split_disjoint_supports(space)
    assert dm.n_dofs > space.n_dofs
    n_comp = {}
    for (bx, by, comp) in dm.entries:
        n_comp[(bx, by)] = max(n_comp.get((bx, by), 0), comp + 1)
    split_basis = [k for k, v in n_comp.items() if v >= 2]
    assert split_basis
    # split supports straddle the void wedge near theta = 0 (x > 0, y ~ 0)
    mesh = am.mesh
    for bx, by in split_basis:
        cells = space.basis_support_cells(bx, by)
        centers = np.array([[0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3])]
                            for b in (mesh.cell_bounds(c) for c in cells)])
        assert centers[:, 0].max() > 0.2
        assert abs(centers[:, 1]).min() < 0.2


def test_corner_connected_basis_keeps_one_dof():
    # supports wrapping around the corner stay pathwise-connected
    omega = 0.97 * 2 * math.pi
    am = sector_amesh(0.1, omega=omega)
    space = gf.build_space(am, 2, 1)
    dm = split_disjoint_supports(space)
    corner_cell = am.mesh.cell_of_point((0.0, 0.0))
    bx_c, by_c = am.mesh.cell_ij(corner_cell)
    n_comp = {}
    for (bx, by, comp) in dm.entries:
        n_comp[(bx, by)] = max(n_comp.get((bx, by), 0), comp + 1)
    # a basis centered right at the corner cell
    key = (bx_c + 1, by_c + 1)
    assert key in n_comp and n_comp[key] == 1


def test_split_components_agree_with_flood_fill():
    """Cell-graph component count never exceeds the pointwise count and
    matches it for supports the slit separates cleanly."""
    omega = 0.97 * 2 * math.pi
    am = sector_amesh(0.1, omega=omega)
    space = gf.build_space(am, 2, 1)
    dm = split_disjoint_supports(space)
    n_comp = {}
    for (bx, by, comp) in dm.entries:
        n_comp[(bx, by)] = max(n_comp.get((bx, by), 0), comp + 1)

    def flood_components(bx, by):
        Ux, Uy = space.knots_x, space.knots_y
        p = space.p
        xs = np.linspace(Ux[bx], Ux[bx + p + 1], 64)
        ys = np.linspace(Uy[by], Uy[by + p + 1], 64)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        mask = am.domain.contains_points(
            np.column_stack([X.ravel(), Y.ravel()])).reshape(64, 64)
        seen = np.zeros_like(mask)
        comps = 0
        for i in range(64):
            for j in range(64):
                if mask[i, j] and not seen[i, j]:
                    comps += 1
                    stack = [(i, j)]
                    seen[i, j] = True
                    while stack:
                        a, b = stack.pop()
                        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                            na, nb = a + da, b + db
                            if 0 <= na < 64 and 0 <= nb < 64 and \
                                    mask[na, nb] and not seen[na, nb]:
                                seen[na, nb] = True
                                stack.append((na, nb))
        return comps

    rng = np.random.default_rng(0)
    keys = sorted(n_comp)
    sample = [keys[i] for i in rng.choice(len(keys), 40, replace=False)]
    agree_on_split = 0
    for bx, by in sample:
        ff = flood_components(bx, by)
        assert n_comp[(bx, by)] <= ff
        if n_comp[(bx, by)] >= 2:
            agree_on_split += int(ff == n_comp[(bx, by)])
    split_sampled = [k for k in sample if n_comp[k] >= 2]
    if split_sampled:
        assert agree_on_split >= len(split_sampled) // 2


def test_detect_slit():
    assert detect_slit(gf.sector_polygon(0.97 * 2 * math.pi), 0.2)
    assert not detect_slit(gf.sector_polygon(1.5 * math.pi), 0.2)
    square = gf.PolygonDomain([(-1, -1), (1, -1), (1, 1), (-1, 1)])
    assert not detect_slit(square, 0.1)


def test_build_dof_map_bijection_without_split():
    am = sector_amesh(0.25)
    space = gf.build_space(am, 2, 1)
    dm = build_dof_map(space)
    assert dm.n_dofs == len(space.active_tensor)
    assert sorted(dm.entries.values()) == list(range(dm.n_dofs))
    assert all(comp == 0 for (_, _, comp) in dm.entries)
