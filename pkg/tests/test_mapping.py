import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradedfem as gf
from gradedfem.mapping import GradedMap, alpha_powers, b_matrix, load_weight, \
    mesh_function, min_gamma, rigid_map


def test_forward_identity_at_gamma_one():
    m = GradedMap(1.0)
    pts = np.array([[0.3, -0.7], [0.0, 0.0], [1.0, 0.5]])
    assert np.allclose(m.forward(pts), pts)


def test_forward_fixes_unit_radius():
    m = GradedMap(4.0)
    assert np.allclose(m.forward((1.0, 0.0)), (1.0, 0.0))


def test_forward_radial_power():
    m = GradedMap(4.0)
    assert np.allclose(m.forward((0.5, 0.0)), (0.0625, 0.0))


def test_inverse_examples():
    assert np.allclose(GradedMap(4.0).inverse((0.0625, 0.0)), (0.5, 0.0))
    assert np.allclose(GradedMap(2.0).inverse((0.0, 0.0)), (0.0, 0.0))
    assert np.allclose(GradedMap(3.0).inverse((0.0, 8.0)), (0.0, 2.0))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.25, 8.0),
       st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_forward_inverse_roundtrip(gamma, x, y):
    m = GradedMap(gamma)
    q = np.array([x, y])
    if np.hypot(x, y) < 1e-8:
        return
    back = m.forward(m.inverse(q))
    assert np.allclose(back, q, rtol=1e-12, atol=1e-12)


def test_b_matrix_identity_at_gamma_one():
    pts = np.array([[0.2, 0.1], [-0.5, 0.7]])
    assert np.allclose(b_matrix(1.0, pts), np.eye(2))


def test_b_matrix_axis_values():
    assert np.allclose(b_matrix(4.0, (1.0, 0.0)), np.diag([0.25, 4.0]))
    assert np.allclose(b_matrix(4.0, (0.0, 1.0)), np.diag([4.0, 0.25]))


def test_b_matrix_det_trace():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, (200, 2))
    for gamma in (0.5, 2.0, 4.0, 6.0):
        B = b_matrix(gamma, pts)
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] ** 2
        assert np.allclose(det, 1.0, atol=1e-12)
        assert np.allclose(B[:, 0, 0] + B[:, 1, 1], gamma + 1.0 / gamma, atol=1e-12)
        assert np.allclose(B, np.swapaxes(B, 1, 2))


@settings(max_examples=100, deadline=None)
@given(st.floats(0.25, 8.0), st.floats(-1, 1), st.floats(-1, 1),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_b_matrix_spectral_bounds(gamma, px, py, xi1, xi2, eta1, eta2):
    if math.hypot(px, py) < 1e-6:
        return
    B = b_matrix(gamma, (px, py))
    xi = np.array([xi1, xi2])
    eta = np.array([eta1, eta2])
    lo = min(gamma, 1.0 / gamma)
    hi = max(gamma, 1.0 / gamma)
    assert xi @ B @ xi >= lo * (xi @ xi) - 1e-10
    assert abs(xi @ B @ eta) <= hi * np.linalg.norm(xi) * np.linalg.norm(eta) + 1e-10


def test_load_weight_examples():
    assert load_weight(1.0, (0.3, -0.2)) == pytest.approx(1.0)
    assert load_weight(4.0, (1.0, 0.0)) == pytest.approx(4.0)
    assert load_weight(2.0, (0.5, 0.5)) == pytest.approx(1.0)


def test_mesh_function_examples():
    assert mesh_function(1.0, 0.3, (0.4, 0.1)) == pytest.approx(0.3)
    assert mesh_function(4.0, 0.1, (1.0, 0.0)) == pytest.approx(0.1)
    assert mesh_function(4.0, 0.1, (0.5, 0.0)) == pytest.approx(0.0125)


def test_min_gamma_examples():
    assert min_gamma(2, 1.5 * math.pi) == pytest.approx(3.0)
    assert min_gamma(3, 1.2 * math.pi) == pytest.approx(3.6)
    # default 2p clears the bound for any admissible opening angle
    for p in (1, 2, 3):
        assert gf.default_gamma(p) > min_gamma(p, 1.999 * math.pi)
    with pytest.raises(ValueError):
        min_gamma(2, math.pi)
    with pytest.raises(ValueError):
        min_gamma(2, 2 * math.pi)


def test_alpha_powers():
    # gamma = 1: plain shifted powers j - (p+1)
    assert np.allclose(alpha_powers(2, 1.0), [-2.0, -1.0, 0.0])
    # p=2, gamma=4: top power 2 * 3/4, spaced by one
    assert np.allclose(alpha_powers(2, 4.0), [-0.5, 0.5, 1.5])
    # the top power clears the corner integrability bound for omega=1.5*pi
    omega = 1.5 * math.pi
    bound = 2.0 - math.pi / omega
    assert alpha_powers(2, 4.0)[-1] > bound
    assert bound == pytest.approx(4.0 / 3.0)


def test_jacobian_matches_finite_differences():
    m = GradedMap(4.0)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1, 1, (50, 2))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) > 0.05]
    J = m.jacobian(pts)
    eps = 1e-7
    for k, e in enumerate(np.eye(2)):
        fd = (m.forward(pts + eps * e) - m.forward(pts - eps * e)) / (2 * eps)
        assert np.allclose(J[:, :, k], fd, rtol=1e-5, atol=1e-7)


def test_rigid_post_map_composition():
    post = rigid_map(angle=0.7, translation=(0.2, -0.3))
    m = GradedMap(2.0, post)
    pts = np.array([[0.4, 0.1], [-0.3, 0.6]])
    R = np.array([[math.cos(0.7), -math.sin(0.7)], [math.sin(0.7), math.cos(0.7)]])
    expect = (GradedMap(2.0).forward(pts)) @ R.T + (0.2, -0.3)
    assert np.allclose(m.forward(pts), expect)
    assert np.allclose(m.inverse(m.forward(pts)), pts, atol=1e-12)
    # rigid motions leave the pullback diffusion matrix untouched
    assert np.allclose(m.b_matrix(pts), GradedMap(2.0).b_matrix(pts), atol=1e-12)
    assert np.allclose(m.load_weight(pts), GradedMap(2.0).load_weight(pts))


def test_invalid_gamma():
    with pytest.raises(ValueError):
        GradedMap(0.0)
    with pytest.raises(ValueError):
        GradedMap(-2.0)


def _sector_reference_energy(v_grad_phys, gamma, omega, amesh):
    """Reference-domain Dirichlet integral of an analytic function."""
    m = GradedMap(gamma)
    total = 0.0
    for c in amesh.active_cells:
        q = gf.clip_element(amesh, int(c), 6)
        if len(q.weights) == 0:
            continue
        J = m.jacobian(q.points)
        g = np.einsum("nba,nb->na", J, v_grad_phys(m.forward(q.points)))
        B = m.b_matrix(q.points)
        total += float(np.sum(q.weights * np.einsum("na,nab,nb->n", g, B, g)))
    return total


def test_form_equivalence_dirichlet_integral():
    # physical integral of |grad(x^2 y)|^2 over the sector by fitted polar
    # quadrature vs the B-weighted reference integral
    omega = 1.5 * math.pi
    xr, wr = np.polynomial.legendre.leggauss(30)
    xt, wt = np.polynomial.legendre.leggauss(120)
    r = 0.5 * (xr + 1.0)
    t = 0.5 * omega * (xt + 1.0)
    R, T = np.meshgrid(r, t, indexing="ij")
    W = np.outer(0.5 * wr * r, 0.5 * omega * wt)
    X, Y = R * np.cos(T), R * np.sin(T)
    total_phys = float(np.sum(W * (4 * X**2 * Y**2 + X**4)))

    def grad_v(pts):
        return np.column_stack([2 * pts[:, 0] * pts[:, 1], pts[:, 0] ** 2])

    # fine polygonization: the arc-chord mass deficit must sit below the
    # 1e-6 comparison tolerance
    dom = gf.sector_polygon(omega, n_arc=16384)
    amesh = gf.classify_elements(gf.build_reference_mesh(0.2), dom)
    for gamma in (2.0, 4.0):
        ref = _sector_reference_energy(grad_v, gamma, omega, amesh)
        assert ref == pytest.approx(total_phys, rel=1e-6)


def _area_via_boundary_image(domain, gmap, n_gauss=20):
    """Exact area of the mapped polygon by Green's theorem along the image
    of its boundary."""
    xs, ws = np.polynomial.legendre.leggauss(n_gauss)
    xs = 0.5 * (xs + 1.0)
    ws = 0.5 * ws
    area = 0.0
    eps = 1e-7
    for k in range(domain.n_edges):
        a, b = domain.edge(k)
        pts = a + np.outer(xs, b - a)
        f = gmap.forward(pts)
        dfdt = (gmap.forward(pts + eps * (b - a)) -
                gmap.forward(pts - eps * (b - a))) / (2 * eps)
        area += float(np.sum(ws * 0.5 * (f[:, 0] * dfdt[:, 1] - f[:, 1] * dfdt[:, 0])))
    return area


def test_measure_equivalence():
    # weighted reference integral reproduces (a) the exact area of the
    # mapped polygon and (b) the true sector area up to polygonization
    omega = 1.5 * math.pi
    dom = gf.sector_polygon(omega)
    amesh = gf.classify_elements(gf.build_reference_mesh(0.2), dom)
    for gamma in (2.0, 4.0):
        m = GradedMap(gamma)
        total = sum(float(np.sum(q.weights * m.load_weight(q.points)))
                    for q in (gf.clip_element(amesh, int(c), 6)
                              for c in amesh.active_cells)
                    if len(q.weights))
        assert total == pytest.approx(_area_via_boundary_image(dom, m), rel=1e-8)
        assert total == pytest.approx(omega / 2.0, rel=1e-6)
