"""Weak multipatch coupling for domains with several nonconvex corners.

Each patch carries its own reference frame, grading map and spline
space; the global space is the direct sum of the patch spaces and
continuity across the straight patch interfaces is imposed by symmetric
Nitsche terms with the average conormal flux and a penalty weighted by
the averaged inverse physical mesh size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import shapely

from .assembly import AssembledSystem, NitscheParams, _COO, assemble_system
from .geometry import PolygonDomain, build_reference_mesh, classify_elements, gauss_legendre
from .mapping import GradedMap, rigid_map
from .splines import SplineSpace, build_space


class MultipatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class Patch:
    """Reference polygon plus the map placing it in the physical plane."""

    polygon: PolygonDomain
    gmap: GradedMap
    label: str = ""


@dataclass(frozen=True)
class Interface:
    """Straight physical segment shared by two patches."""

    side_a: int
    side_b: int
    p0: tuple[float, float]
    p1: tuple[float, float]

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])


@dataclass(frozen=True)
class PatchSet:
    patches: list[Patch]
    interfaces: list[Interface]


@dataclass
class PatchDiscretization:
    patch: Patch
    space: SplineSpace
    system: AssembledSystem


@dataclass
class MultipatchSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    discs: list[PatchDiscretization]
    offsets: list[int]
    interfaces: list[Interface]
    params: NitscheParams

    @property
    def n_dofs(self) -> int:
        return self.matrix.shape[0]


def make_patch(phys_vertices, gamma: float = 1.0, corner_index: int | None = None,
               edge_markers=None, densify: int = 128, label: str = "") -> Patch:
    """Build a patch from a physical CCW polygon.

    With a marked corner the patch frame puts that vertex at the origin
    and the outgoing boundary edge along +x, and the polygon is pulled
    back through the radial grading (edges from the corner are rays and
    stay straight; other edges are densified before pullback).  Without a
    corner the polygon is recentred and the map is a pure translation.
    """
    v = np.asarray(phys_vertices, dtype=float)
    n = len(v)
    if edge_markers is None:
        edge_markers = [None] * n
    if corner_index is None:
        if gamma != 1.0:
            raise MultipatchError("grading needs a marked corner")
        center = 0.5 * (v.min(axis=0) + v.max(axis=0))
        local = v - center
        if np.max(np.abs(local)) > 1.0:
            raise MultipatchError("patch too large for the reference square")
        post = rigid_map(0.0, center)
        poly = PolygonDomain(local, corner_index=None, edge_markers=edge_markers)
        return Patch(polygon=poly, gmap=GradedMap(1.0, post), label=label)

    c = v[corner_index]
    e = v[(corner_index + 1) % n] - c
    phi = math.atan2(e[1], e[0])
    rot = np.array([[math.cos(-phi), -math.sin(-phi)],
                    [math.sin(-phi), math.cos(-phi)]])
    local = (v - c) @ rot.T
    radii = np.hypot(local[:, 0], local[:, 1])
    if radii.max() > 1.0:
        raise MultipatchError("patch does not fit in the unit disk of its corner")

    ref_verts: list[np.ndarray] = []
    ref_markers: list = []
    inv_exp = 1.0 / gamma - 1.0
    for k in range(n):
        a = local[k]
        b = local[(k + 1) % n]
        ra, rb = np.hypot(*a), np.hypot(*b)
        through_corner = min(ra, rb) < 1e-14
        if through_corner or densify <= 1:
            pieces = np.array([a])
        else:
            # power-law spacing resolves the pullback curvature near the corner
            t = np.arange(densify) / densify
            rmin = min(ra, rb)
            grade = max(1.0, gamma / 2.0) if rmin < 0.3 else 1.0
            t = t ** grade if ra <= rb else 1.0 - (1.0 - t) ** grade
            pieces = a + np.outer(np.sort(t), b - a)
        for q in pieces:
            r = math.hypot(q[0], q[1])
            ref_verts.append(q * (r ** inv_exp if r > 0 else 0.0))
            ref_markers.append(edge_markers[k])
    ref = np.asarray(ref_verts)
    new_corner = int(np.argmin(np.hypot(ref[:, 0], ref[:, 1])))
    ref[new_corner] = (0.0, 0.0)
    poly = PolygonDomain(ref, corner_index=new_corner, edge_markers=ref_markers)
    return Patch(polygon=poly, gmap=GradedMap(gamma, rigid_map(phi, c)), label=label)


def discretize_patch(patch: Patch, h: float, p: int, r: int | None,
                     params: NitscheParams, f, g, split=False,
                     quad_order: int | None = None) -> PatchDiscretization:
    mesh = build_reference_mesh(h)
    amesh = classify_elements(mesh, patch.polygon)
    space = build_space(amesh, p, r, split=split)
    system = assemble_system(space, patch.gmap, params, f=f, g=g,
                             quad_order=quad_order)
    return PatchDiscretization(patch=patch, space=space, system=system)


def _interface_rule(iface: Interface, hs: tuple[float, float], p: int
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Composite Gauss rule along the physical segment with the normal
    pointing from side a to side b."""
    p0 = np.asarray(iface.p0)
    p1 = np.asarray(iface.p1)
    L = iface.length
    n_sub = max(2, int(math.ceil(L / (0.5 * min(hs)))))
    xs, ws = gauss_legendre(p + 1)
    pts, wts = [], []
    for k in range(n_sub):
        t0, t1 = k / n_sub, (k + 1) / n_sub
        t = t0 + (t1 - t0) * xs
        pts.append(p0 + np.outer(t, p1 - p0))
        wts.append(ws * (t1 - t0) * L)
    d = (p1 - p0) / L
    normal = np.array([d[1], -d[0]])
    return np.vstack(pts), np.concatenate(wts), normal


def _side_eval(disc: PatchDiscretization, phys_pts: np.ndarray):
    """Traces, physical gradients and DOF ids per point on one side."""
    space = disc.space
    gmap = disc.patch.gmap
    ref = gmap.inverse(phys_pts)
    vals, grads, dofs = [], [], []
    for x in ref:
        try:
            cell = space._locate_active_cell(x)
        except Exception as exc:
            raise MultipatchError(
                f"interface point {x} falls outside a patch (geometry gap?)") from exc
        ders = space.eval_cell(cell, x[None, :], 1)
        J = gmap.jacobian(x)
        gref = np.stack([ders[1, 0, :, 0], ders[0, 1, :, 0]])
        gphys = np.linalg.solve(J.T, gref)
        vals.append(ders[0, 0, :, 0])
        grads.append(gphys)
        dofs.append(space.dof_map.cell_dofs[cell])
    return vals, grads, dofs, ref


def assemble_multipatch(discs: list[PatchDiscretization],
                        interfaces: list[Interface],
                        params: NitscheParams) -> MultipatchSystem:
    """Couple per-patch systems with symmetric Nitsche interface terms."""
    offsets = [0]
    for d in discs:
        offsets.append(offsets[-1] + d.space.n_dofs)
    n = offsets[-1]
    blocks = sp.block_diag([d.system.matrix for d in discs], format="csr")
    rhs = np.concatenate([d.system.rhs for d in discs])

    coo = _COO()
    for iface in interfaces:
        da, db = discs[iface.side_a], discs[iface.side_b]
        ha, hb = da.space.mesh.mesh.h, db.space.mesh.mesh.h
        pts, wts, normal = _interface_rule(iface, (ha, hb), max(da.space.p, db.space.p))
        # orient the normal from side a into side b
        probe = pts[len(pts) // 2] + 1e-8 * normal
        ref_probe = da.patch.gmap.inverse(probe)
        if shapely.contains_xy(da.patch.polygon.shape, ref_probe[0], ref_probe[1]):
            normal = -normal
        va, ga, dofa, refa = _side_eval(da, pts)
        vb, gb, dofb, refb = _side_eval(db, pts)
        ra = np.hypot(refa[:, 0], refa[:, 1])
        rb = np.hypot(refb[:, 0], refb[:, 1])
        inv_ha = 1.0 / (ha * ra ** (da.patch.gmap.gamma - 1.0))
        inv_hb = 1.0 / (hb * rb ** (db.patch.gmap.gamma - 1.0))
        wH = 0.5 * (inv_ha + inv_hb)
        for q in range(len(wts)):
            dofs = np.concatenate([dofa[q] + offsets[iface.side_a],
                                   dofb[q] + offsets[iface.side_b]])
            jump = np.concatenate([va[q], -vb[q]])
            avg = 0.5 * np.concatenate([normal @ ga[q], normal @ gb[q]])
            E = wts[q] * (-np.outer(avg, jump) - np.outer(jump, avg)
                          + params.beta * wH[q] * np.outer(jump, jump))
            coo.add_block(dofs, 0.5 * (E + E.T))
    A = blocks + coo.matrix(n)
    A = ((A + A.T) * 0.5).tocsr()
    return MultipatchSystem(matrix=A, rhs=rhs, discs=discs, offsets=offsets,
                            interfaces=interfaces, params=params)


def interface_jump_norm(msys: MultipatchSystem, solution: np.ndarray) -> float:
    """L2 norm of the solution jump across all patch interfaces."""
    total = 0.0
    for iface in msys.interfaces:
        da, db = msys.discs[iface.side_a], msys.discs[iface.side_b]
        ha, hb = da.space.mesh.mesh.h, db.space.mesh.mesh.h
        pts, wts, _ = _interface_rule(iface, (ha, hb), max(da.space.p, db.space.p))
        va, _, dofa, _ = _side_eval(da, pts)
        vb, _, dofb, _ = _side_eval(db, pts)
        for q in range(len(wts)):
            ua = solution[dofa[q] + msys.offsets[iface.side_a]] @ va[q]
            ub = solution[dofb[q] + msys.offsets[iface.side_b]] @ vb[q]
            total += wts[q] * (ua - ub) ** 2
    return math.sqrt(total)


def multipatch_errors(msys: MultipatchSystem, solution: np.ndarray, problem,
                      quad_order: int | None = None) -> dict[str, float]:
    """Global L2 / H1-semi errors summed over patches (exact solution
    required)."""
    from .analysis import compute_errors
    l2_sq = 0.0
    h1_sq = 0.0
    for i, d in enumerate(msys.discs):
        u = solution[msys.offsets[i]:msys.offsets[i + 1]]
        rep = compute_errors(u, problem, d.space, d.patch.gmap, msys.params,
                             quad_order=quad_order)
        l2_sq += rep.l2 ** 2
        h1_sq += rep.h1_semi ** 2
    return {"l2": math.sqrt(l2_sq), "h1_semi": math.sqrt(h1_sq)}


# -- shipped example configurations ----------------------------------------

@dataclass(frozen=True)
class SmoothProblem:
    """Polynomial reference problem ``u = x^2 y`` on a given polygon
    (which must already sit inside the reference square)."""

    polygon_vertices: tuple
    has_exact: bool = True
    omega = None

    def domain(self) -> PolygonDomain:
        return PolygonDomain(np.asarray(self.polygon_vertices, dtype=float))

    def exact(self, pts):
        pts = np.atleast_2d(pts)
        return pts[:, 0] ** 2 * pts[:, 1]

    def exact_grad(self, pts):
        pts = np.atleast_2d(pts)
        return np.column_stack([2 * pts[:, 0] * pts[:, 1], pts[:, 0] ** 2])

    def source(self, pts):
        pts = np.atleast_2d(pts)
        return -2.0 * pts[:, 1]

    def dirichlet(self, pts):
        return self.exact(pts)


def two_patch_square() -> tuple[PatchSet, SmoothProblem]:
    """Unit square split vertically; both patches ungraded."""
    left = make_patch([(0, 0), (0.5, 0), (0.5, 1), (0, 1)],
                      edge_markers=[None, ("iface", 0), None, None],
                      label="left")
    right = make_patch([(0.5, 0), (1, 0), (1, 1), (0.5, 1)],
                       edge_markers=[None, None, None, ("iface", 0)],
                       label="right")
    pset = PatchSet(patches=[left, right],
                    interfaces=[Interface(0, 1, (0.5, 0.0), (0.5, 1.0))])
    prob = SmoothProblem(polygon_vertices=((0, 0), (1, 0), (1, 1), (0, 1)))
    return pset, prob


@dataclass(frozen=True)
class UDomainProblem:
    """U-shaped domain with two reentrant corners; boundary data
    ``x (1 - x)`` on the top edge and zero elsewhere, zero source."""

    has_exact: bool = False
    omega = None

    def source(self, pts):
        return np.zeros(len(np.atleast_2d(pts)))

    def dirichlet(self, pts):
        pts = np.atleast_2d(pts)
        on_top = np.abs(pts[:, 1] - 1.0) < 1e-9
        return np.where(on_top, pts[:, 0] * (1.0 - pts[:, 0]), 0.0)


def three_patch_udomain(gamma: float = 4.0) -> tuple[PatchSet, UDomainProblem]:
    """[0,1]^2 minus the notch [0.25,0.75]x[0,0.5], split into two graded
    corner patches and an ungraded bridge."""
    left = make_patch(
        [(0, 0), (0.25, 0), (0.25, 0.5), (0.35, 0.5), (0.35, 1), (0, 1)],
        gamma=gamma, corner_index=2,
        edge_markers=[None, None, None, ("iface", 0), None, None],
        label="left-corner")
    mid = make_patch(
        [(0.35, 0.5), (0.65, 0.5), (0.65, 1), (0.35, 1)],
        edge_markers=[None, ("iface", 1), None, ("iface", 0)],
        label="bridge")
    right = make_patch(
        [(0.75, 0), (1, 0), (1, 1), (0.65, 1), (0.65, 0.5), (0.75, 0.5)],
        gamma=gamma, corner_index=5,
        edge_markers=[None, None, None, ("iface", 1), None, None],
        label="right-corner")
    pset = PatchSet(
        patches=[left, mid, right],
        interfaces=[Interface(0, 1, (0.35, 0.5), (0.35, 1.0)),
                    Interface(1, 2, (0.65, 0.5), (0.65, 1.0))])
    return pset, UDomainProblem()


def solve_multipatch(pset: PatchSet, problem, h: float, p: int = 2,
                     r: int | None = None, params: NitscheParams | None = None,
                     split=False, quad_order: int | None = None
                     ) -> tuple[MultipatchSystem, np.ndarray]:
    """Discretize every patch, couple and solve."""
    from .solve import solve as solve_system
    params = params or NitscheParams()
    discs = [discretize_patch(patch, h, p, r, params,
                              f=problem.source, g=problem.dirichlet,
                              split=split, quad_order=quad_order)
             for patch in pset.patches]
    msys = assemble_multipatch(discs, pset.interfaces, params)
    rep = solve_system(msys)
    return msys, rep.solution
