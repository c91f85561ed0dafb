"""Tensor-product B-spline spaces on the background grid.

Open knot vectors are aligned with the grid lines; interior knot
multiplicity ``p - r`` gives C^r continuity across cells.  The space is
restricted to basis functions whose support meets the active mesh, and
basis functions whose support decomposes into disconnected pieces of the
domain can be split into one degree of freedom per piece.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ActiveMesh, FACE_MATERIAL_TOL, PolygonDomain


class SpaceError(ValueError):
    pass


def open_knot_vector(breaks: np.ndarray, p: int, r: int) -> np.ndarray:
    """Open (clamped) knot vector on ``breaks`` with C^r interior joins."""
    m = p - r
    knots = [breaks[0]] * (p + 1)
    for b in breaks[1:-1]:
        knots.extend([b] * m)
    knots.extend([breaks[-1]] * (p + 1))
    return np.asarray(knots, dtype=float)


def ders_basis_funs(span: int, xs: np.ndarray, p: int, U: np.ndarray,
                    nder: int) -> np.ndarray:
    """All nonzero B-spline basis functions and derivatives on one span.

    Vectorized over evaluation points; returns ``(nder+1, p+1, npts)``
    where entry ``[k, i]`` is the k-th derivative of basis ``span - p + i``.
    """
    xs = np.asarray(xs, dtype=float)
    npt = xs.shape[0]
    n = min(nder, p)
    ndu = np.empty((p + 1, p + 1, npt))
    ndu[0, 0] = 1.0
    left = np.empty((p + 1, npt))
    right = np.empty((p + 1, npt))
    for j in range(1, p + 1):
        left[j] = xs - U[span + 1 - j]
        right[j] = U[span + j] - xs
        saved = np.zeros(npt)
        for rr in range(j):
            ndu[j, rr] = right[rr + 1] + left[j - rr]
            temp = ndu[rr, j - 1] / ndu[j, rr]
            ndu[rr, j] = saved + right[rr + 1] * temp
            saved = left[j - rr] * temp
        ndu[j, j] = saved
    ders = np.zeros((nder + 1, p + 1, npt))
    ders[0] = ndu[:, p]
    for rr in range(p + 1):
        s1, s2 = 0, 1
        a = np.zeros((2, p + 1, npt))
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = np.zeros(npt)
            rk = rr - k
            pk = p - k
            if rr >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if rr - 1 <= pk else p - rr
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d += a[s2, j] * ndu[rk + j, pk]
            if rr <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, rr]
                d += a[s2, k] * ndu[rr, pk]
            ders[k, rr] = d
            s1, s2 = s2, s1
    fac = float(p)
    for k in range(1, n + 1):
        ders[k] *= fac
        fac *= p - k
    return ders


def greville_abscissae(U: np.ndarray, p: int) -> np.ndarray:
    n = len(U) - p - 1
    return np.array([U[i + 1:i + p + 1].mean() for i in range(n)])


def find_span(U: np.ndarray, p: int, x: float) -> int:
    """Knot span containing ``x`` (right-continuous, clamped at the end)."""
    n = len(U) - p - 1
    if x >= U[n]:
        return n - 1
    return int(np.searchsorted(U, x, side="right")) - 1


@dataclass(frozen=True)
class DofMap:
    """Maps (tensor basis, support component) pairs to global DOF ids."""

    n_dofs: int
    entries: dict[tuple[int, int, int], int]
    cell_dofs: dict[int, np.ndarray]
    split: bool


@dataclass(frozen=True)
class BasisEval:
    """Values/derivatives of all basis functions alive on one cell."""

    cell: int
    local_dofs: np.ndarray
    values: np.ndarray
    derivs: dict[tuple[int, int], np.ndarray]


class SplineSpace:
    """Degree-``p`` C^``r`` tensor B-spline space restricted to the
    active mesh."""

    def __init__(self, amesh: ActiveMesh, p: int, r: int | None = None):
        if p < 1:
            raise SpaceError("spline degree must be at least 1")
        r = p - 1 if r is None else int(r)
        if not (0 <= r <= p - 1):
            raise SpaceError("regularity must satisfy 0 <= r <= p - 1")
        self.mesh = amesh
        self.p = p
        self.r = r
        self.mult = p - r
        mesh = amesh.mesh
        self.knots_x = open_knot_vector(mesh.xs, p, r)
        self.knots_y = open_knot_vector(mesh.ys, p, r)
        self.n1x = len(self.knots_x) - p - 1
        self.n1y = len(self.knots_y) - p - 1

        tensor_active = set()
        for c in amesh.active_cells:
            ix, iy = mesh.cell_ij(int(c))
            for by in range(iy * self.mult, iy * self.mult + p + 1):
                for bx in range(ix * self.mult, ix * self.mult + p + 1):
                    tensor_active.add((bx, by))
        self.active_tensor = sorted(tensor_active, key=lambda t: (t[1], t[0]))
        self.dof_map = build_dof_map(self)

    # -- tensor-index helpers -------------------------------------------------
    def cell_spans(self, cell: int) -> tuple[int, int]:
        ix, iy = self.mesh.mesh.cell_ij(cell)
        return self.p + ix * self.mult, self.p + iy * self.mult

    def cell_tensor_basis(self, cell: int) -> np.ndarray:
        """(nloc, 2) tensor indices in local ordering (y-major)."""
        ix, iy = self.mesh.mesh.cell_ij(cell)
        bx = np.arange(ix * self.mult, ix * self.mult + self.p + 1)
        by = np.arange(iy * self.mult, iy * self.mult + self.p + 1)
        BX, BY = np.meshgrid(bx, by)          # BY varies along rows
        return np.column_stack([BX.ravel(), BY.ravel()])

    def basis_support_cells(self, bx: int, by: int) -> list[int]:
        """Active cells in the support of tensor basis (bx, by)."""
        m = self.mult
        mesh = self.mesh.mesh
        cx0 = max(0, math.ceil((bx - self.p) / m))
        cx1 = min(mesh.nx - 1, bx // m)
        cy0 = max(0, math.ceil((by - self.p) / m))
        cy1 = min(mesh.ny - 1, by // m)
        out = []
        for cy in range(cy0, cy1 + 1):
            for cx in range(cx0, cx1 + 1):
                c = mesh.cell_index(cx, cy)
                if self.mesh.is_active(c):
                    out.append(c)
        return out

    @property
    def n_dofs(self) -> int:
        return self.dof_map.n_dofs

    # -- evaluation -----------------------------------------------------------
    def eval_cell(self, cell: int, points: np.ndarray, nder: int = 1) -> np.ndarray:
        """Basis values/derivatives on a cell at given points.

        Returns ``(nder+1, nder+1, nloc, npts)`` indexed by the x- and
        y-derivative orders; local ordering matches
        :meth:`cell_tensor_basis`.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        sx, sy = self.cell_spans(cell)
        dx = ders_basis_funs(sx, points[:, 0], self.p, self.knots_x, nder)
        dy = ders_basis_funs(sy, points[:, 1], self.p, self.knots_y, nder)
        # out[a, b, j*(p+1)+i, q] = dx[a, i, q] * dy[b, j, q]  (y-major locals)
        out = np.einsum("aiq,bjq->abjiq", dx, dy)
        nloc = (self.p + 1) ** 2
        return out.reshape(nder + 1, nder + 1, nloc, points.shape[0])

    def eval_point(self, point, nder: int = 1) -> BasisEval:
        """Locate the active cell containing ``point`` and evaluate there."""
        cell = self._locate_active_cell(point)
        ders = self.eval_cell(cell, np.asarray(point, dtype=float)[None, :], nder)
        derivs = {(a, b): ders[a, b, :, 0]
                  for a in range(nder + 1) for b in range(nder + 1)
                  if 0 < a + b <= nder}
        return BasisEval(cell=cell,
                         local_dofs=self.dof_map.cell_dofs[cell],
                         values=ders[0, 0, :, 0],
                         derivs=derivs)

    def _locate_active_cell(self, point) -> int:
        mesh = self.mesh.mesh
        c = mesh.cell_of_point(point)
        if self.mesh.is_active(c):
            return c
        ix, iy = mesh.cell_ij(c)
        tol = 1e-12
        for jy in range(max(0, iy - 1), min(mesh.ny, iy + 2)):
            for jx in range(max(0, ix - 1), min(mesh.nx, ix + 2)):
                cand = mesh.cell_index(jx, jy)
                if not self.mesh.is_active(cand):
                    continue
                x0, y0, x1, y1 = mesh.cell_bounds(cand)
                if (x0 - tol <= point[0] <= x1 + tol
                        and y0 - tol <= point[1] <= y1 + tol):
                    return cand
        raise SpaceError(f"point {point} lies outside the active mesh")


def build_space(amesh: ActiveMesh, p: int, r: int | None = None,
                split: bool | str = False) -> SplineSpace:
    """Spline space on the active mesh; ``split`` may be True, False or
    "auto" (split only when the domain has a slit-like feature)."""
    space = SplineSpace(amesh, p, r)
    if split == "auto":
        split = detect_slit(amesh.domain, amesh.mesh.h)
    if split:
        space.dof_map = split_disjoint_supports(space)
    return space


def build_dof_map(space: SplineSpace) -> DofMap:
    """One DOF per active tensor basis function (no splitting)."""
    entries = {(bx, by, 0): i for i, (bx, by) in enumerate(space.active_tensor)}
    cell_dofs = {}
    for c in space.mesh.active_cells:
        c = int(c)
        tb = space.cell_tensor_basis(c)
        cell_dofs[c] = np.array([entries[(bx, by, 0)] for bx, by in tb])
    return DofMap(n_dofs=len(space.active_tensor), entries=entries,
                  cell_dofs=cell_dofs, split=False)


def split_disjoint_supports(space: SplineSpace,
                            domain: PolygonDomain | None = None) -> DofMap:
    """Assign one DOF per pathwise-connected piece of each basis support.

    Support cells are connected through shared faces only where the face
    carries domain material, so slit-separated pieces of a support get
    independent unknowns.
    """
    amesh = space.mesh
    h = amesh.mesh.h
    tol = FACE_MATERIAL_TOL * h
    entries: dict[tuple[int, int, int], int] = {}
    comp_of_cell: dict[tuple[int, int], dict[int, int]] = {}
    next_dof = 0
    for bx, by in space.active_tensor:
        cells = space.basis_support_cells(bx, by)
        parent = {c: c for c in cells}

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        cellset = set(cells)
        for c in cells:
            ix, iy = amesh.mesh.cell_ij(c)
            for nb in (amesh.mesh.cell_index(ix + 1, iy) if ix + 1 < amesh.mesh.nx else -1,
                       amesh.mesh.cell_index(ix, iy + 1) if iy + 1 < amesh.mesh.ny else -1):
                if nb in cellset and amesh.face_material(c, nb) > tol:
                    ra, rb = find(c), find(nb)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        roots = sorted({find(c) for c in cells})
        comp_index = {root: i for i, root in enumerate(roots)}
        comp_of_cell[(bx, by)] = {c: comp_index[find(c)] for c in cells}
        for i in range(len(roots)):
            entries[(bx, by, i)] = next_dof
            next_dof += 1
    cell_dofs = {}
    for c in amesh.active_cells:
        c = int(c)
        tb = space.cell_tensor_basis(c)
        cell_dofs[c] = np.array([entries[(bx, by, comp_of_cell[(bx, by)][c])]
                                 for bx, by in tb])
    return DofMap(n_dofs=next_dof, entries=entries, cell_dofs=cell_dofs, split=True)


def eval_basis(space: SplineSpace, point, max_deriv: int = 1) -> BasisEval:
    return space.eval_point(point, max_deriv)


def detect_slit(domain: PolygonDomain, h: float) -> bool:
    """Heuristic slit test: two stretches of boundary closer than ``h``
    in the plane but far apart along the boundary."""
    verts = domain.vertices
    n = len(verts)
    pts, arcs = [], []
    s = 0.0
    step = h / 4.0
    for k in range(n):
        a, b = verts[k], verts[(k + 1) % n]
        L = float(np.hypot(*(b - a)))
        m = max(1, int(math.ceil(L / step)))
        t = np.arange(m) / m
        pts.append(a + np.outer(t, b - a))
        arcs.append(s + t * L)
        s += L
    P = np.vstack(pts)
    A = np.concatenate(arcs)
    total = s
    d2 = np.sum((P[:, None, :] - P[None, :, :]) ** 2, axis=-1)
    path = np.abs(A[:, None] - A[None, :])
    path = np.minimum(path, total - path)
    mask = (d2 < h * h) & (path > 4.0 * h)
    return bool(np.any(mask))


def greville_interpolant(space: SplineSpace, fn) -> np.ndarray:
    """Coefficients of the Greville collocation interpolant of ``fn``.

    The interpolation is done on the full tensor grid and restricted to
    the active DOFs (split components of one basis share the
    coefficient), which is exact for any function the space reproduces.
    """
    gx = greville_abscissae(space.knots_x, space.p)
    gy = greville_abscissae(space.knots_y, space.p)
    Ax = _collocation_matrix(space.knots_x, space.p, gx)
    Ay = _collocation_matrix(space.knots_y, space.p, gy)
    GX, GY = np.meshgrid(gx, gy, indexing="ij")
    F = np.asarray(fn(np.column_stack([GX.ravel(), GY.ravel()])))
    F = F.reshape(len(gx), len(gy))
    C = np.linalg.solve(Ax, F)
    C = np.linalg.solve(Ay, C.T).T
    coeffs = np.zeros(space.n_dofs)
    for (bx, by, _comp), dof in space.dof_map.entries.items():
        coeffs[dof] = C[bx, by]
    return coeffs


def _collocation_matrix(U: np.ndarray, p: int, xs: np.ndarray) -> np.ndarray:
    n = len(U) - p - 1
    A = np.zeros((len(xs), n))
    for i, x in enumerate(xs):
        span = find_span(U, p, x)
        vals = ders_basis_funs(span, np.array([x]), p, U, 0)[0, :, 0]
        A[i, span - p:span + 1] = vals
    return A
