"""Background meshes, polygonal domains, element classification and cut quadrature.

Everything lives in reference coordinates on (a cover of) the square
[-1, 1]^2.  The computational domain is a simple polygon; a uniform
quadrilateral grid is laid over it and cells are classified as interior,
cut or exterior.  Integration over cell-domain intersections uses exact
polygon clipping followed by constrained Delaunay triangulation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon, box

# A cut cell keeps its classification even when the clipped area is a
# sliver; slivers below this fraction of the cell area get no volume
# quadrature (the ghost penalty carries their stability burden).
SLIVER_REL_AREA = 1e-12
# Exterior-overlap threshold deciding "cut" (ties resolve toward cut).
CUT_EXTERIOR_REL_AREA = 1e-12
# Shared faces with less domain material than this are treated as void
# when deciding support connectivity.
FACE_MATERIAL_TOL = 1e-10


class GeometryError(ValueError):
    pass


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=64)
def duffy_triangle_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature on the unit triangle {u,v >= 0, u+v <= 1}.

    Built by collapsing an n x n tensor Gauss rule; exact for total
    degree <= 2n - 2 and positive by construction.
    """
    xs, ws = gauss_legendre(n)
    s, t = np.meshgrid(xs, xs, indexing="ij")
    u = s.ravel()
    v = (t * (1.0 - s)).ravel()
    w = np.outer(ws, ws).ravel() * (1.0 - s.ravel())
    return np.column_stack([u, v]), w


def map_to_triangle(verts: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Push the unit-triangle rule onto the triangle with rows ``verts``."""
    uv, w = duffy_triangle_rule(n)
    e1 = verts[1] - verts[0]
    e2 = verts[2] - verts[0]
    pts = verts[0] + np.outer(uv[:, 0], e1) + np.outer(uv[:, 1], e2)
    det = abs(e1[0] * e2[1] - e1[1] * e2[0])
    return pts, w * det


def _signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


class PolygonDomain:
    """Simple CCW polygon inside [-1,1]^2 with an optional singular corner.

    Parameters
    ----------
    vertices : (n, 2) array
        Counterclockwise vertex list (not repeated at the end).
    corner_index : int, optional
        Index of the singular corner; that vertex must sit exactly at the
        origin.  ``None`` for domains without a marked corner.
    edge_markers : sequence, optional
        One marker per edge ``vertices[i] -> vertices[i+1]``; ``None``
        means exterior Dirichlet boundary.  Used by multipatch coupling.
    """

    def __init__(self, vertices, corner_index=None, edge_markers=None):
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise GeometryError("polygon needs an (n, 2) vertex array with n >= 3")
        if np.max(np.abs(v)) > 1.0 + 1e-12:
            raise GeometryError("polygon vertices must lie inside [-1, 1]^2")
        if _signed_area(v) <= 0.0:
            raise GeometryError("polygon must be counterclockwise and non-degenerate")
        shape = Polygon(v)
        if not shape.is_valid:
            raise GeometryError("polygon must be simple (non-self-intersecting)")
        if corner_index is not None:
            corner_index = int(corner_index)
            if not (0 <= corner_index < len(v)):
                raise GeometryError("corner_index out of range")
            if v[corner_index, 0] != 0.0 or v[corner_index, 1] != 0.0:
                raise GeometryError("singular corner vertex must be exactly (0, 0)")
        if edge_markers is not None:
            edge_markers = tuple(edge_markers)
            if len(edge_markers) != len(v):
                raise GeometryError("need one edge marker per vertex")
        self.vertices = v
        self.corner_index = corner_index
        self.edge_markers = edge_markers
        self._shape = shape
        shapely.prepare(self._shape)

    @property
    def shape(self) -> Polygon:
        return self._shape

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    def edge(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices[k], self.vertices[(k + 1) % len(self.vertices)]

    def edge_marker(self, k: int):
        return None if self.edge_markers is None else self.edge_markers[k]

    @property
    def area(self) -> float:
        return self._shape.area

    @property
    def perimeter(self) -> float:
        return self._shape.length

    def contains_points(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return shapely.contains_xy(self._shape, pts[:, 0], pts[:, 1])

    def with_start_vertex(self, k: int) -> "PolygonDomain":
        """Same polygon with the vertex list rotated to start at ``k``."""
        n = len(self.vertices)
        order = [(k + i) % n for i in range(n)]
        ci = None if self.corner_index is None else order.index(self.corner_index)
        em = None if self.edge_markers is None else tuple(self.edge_markers[i] for i in order)
        return PolygonDomain(self.vertices[order], corner_index=ci, edge_markers=em)

    @classmethod
    def from_json(cls, text: str) -> "PolygonDomain":
        data = json.loads(text)
        return cls(np.asarray(data["vertices"], dtype=float),
                   corner_index=data.get("corner_index"))

    def to_json(self) -> str:
        data = {"vertices": self.vertices.tolist()}
        if self.corner_index is not None:
            data["corner_index"] = self.corner_index
        return json.dumps(data)


@dataclass(frozen=True)
class ReferenceMesh:
    """Uniform axis-aligned grid of square cells covering [-1, 1]^2.

    The grid origin sits at ``(-1 - shift_x, -1 - shift_y)`` so that any
    shift in [0, h)^2 keeps the square covered; cells are indexed
    row-major, ``cell = iy * nx + ix``.
    """

    h: float
    shift: tuple[float, float]
    nx: int
    ny: int
    x0: float
    y0: float

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def xs(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.nx + 1)

    @property
    def ys(self) -> np.ndarray:
        return self.y0 + self.h * np.arange(self.ny + 1)

    def cell_index(self, ix: int, iy: int) -> int:
        return iy * self.nx + ix

    def cell_ij(self, c: int) -> tuple[int, int]:
        return c % self.nx, c // self.nx

    def cell_bounds(self, c: int) -> tuple[float, float, float, float]:
        ix, iy = self.cell_ij(c)
        x0 = self.x0 + ix * self.h
        y0 = self.y0 + iy * self.h
        return x0, y0, x0 + self.h, y0 + self.h

    def cell_of_point(self, p) -> int:
        """Cell whose half-open box contains ``p`` (clamped to the grid)."""
        ix = min(max(int(math.floor((p[0] - self.x0) / self.h)), 0), self.nx - 1)
        iy = min(max(int(math.floor((p[1] - self.y0) / self.h)), 0), self.ny - 1)
        return self.cell_index(ix, iy)


def build_reference_mesh(h: float, shift=(0.0, 0.0)) -> ReferenceMesh:
    """Uniform grid of side ``h`` covering [-1, 1]^2 after ``shift``."""
    if not (0.0 < h <= 1.0):
        raise GeometryError(f"mesh size must satisfy 0 < h <= 1, got {h}")
    sx, sy = float(shift[0]), float(shift[1])
    if not (0.0 <= sx < h and 0.0 <= sy < h):
        raise GeometryError("shift components must lie in [0, h)")
    nx = int(math.ceil((2.0 + sx) / h - 1e-12))
    ny = int(math.ceil((2.0 + sy) / h - 1e-12))
    mesh = ReferenceMesh(h=h, shift=(sx, sy), nx=nx, ny=ny, x0=-1.0 - sx, y0=-1.0 - sy)
    assert mesh.x0 + nx * h >= 1.0 - 1e-12 and mesh.y0 + ny * h >= 1.0 - 1e-12
    return mesh


def corner_centered_shift(h: float) -> tuple[float, float]:
    """Shift placing the origin at the center of a cell (both axes)."""
    s = (-1.0 - h / 2.0) % h
    if s > h * (1.0 - 1e-12):
        s = 0.0
    return (s, s)


@dataclass(frozen=True)
class GhostFace:
    """Interior face of the active mesh adjacent to at least one cut cell."""

    cells: tuple[int, int]          # (lower index, higher index)
    axis: int                       # 0: face normal along x, 1: along y
    p0: tuple[float, float]
    p1: tuple[float, float]
    material_length: float          # length of face ∩ domain

    @property
    def length(self) -> float:
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])


@dataclass(frozen=True)
class QuadratureCell:
    """Volume rule for (cell ∩ domain); weights carry the area measure."""

    points: np.ndarray
    weights: np.ndarray
    parent_cell: int


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Boundary rule with outward unit normals for ∂domain inside a cell."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    edge_ids: np.ndarray
    parent_cell: int


@dataclass
class ActiveMesh:
    """Classification of a :class:`ReferenceMesh` against a polygon."""

    mesh: ReferenceMesh
    domain: PolygonDomain
    active_cells: np.ndarray
    cut_cells: np.ndarray
    inside_cells: np.ndarray
    ghost_faces: list[GhostFace]
    cell_clips: dict[int, list[np.ndarray]]
    cell_areas: dict[int, float]
    boundary_pieces: dict[int, list[tuple[int, float, float]]]

    def __post_init__(self):
        self._active_set = frozenset(int(c) for c in self.active_cells)
        self._cut_set = frozenset(int(c) for c in self.cut_cells)
        self._face_material = {f.cells: f.material_length for f in self.ghost_faces}

    def is_active(self, c: int) -> bool:
        return c in self._active_set

    def is_cut(self, c: int) -> bool:
        return c in self._cut_set

    @property
    def boundary_cells(self) -> list[int]:
        return sorted(self.boundary_pieces)

    def face_material(self, c1: int, c2: int) -> float:
        """Material length of the shared face; faces not adjacent to any
        cut cell lie entirely inside the domain."""
        key = (min(c1, c2), max(c1, c2))
        return self._face_material.get(key, self.mesh.h)


def _polygon_parts(geom) -> list[Polygon]:
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]


def _walk_boundary_pieces(mesh: ReferenceMesh, domain: PolygonDomain,
                          active: set[int]) -> dict[int, list[tuple[int, float, float]]]:
    """Split every polygon edge at grid lines and assign each piece to an
    active owner cell (pieces riding exactly on a grid line go to whichever
    adjacent cell has material)."""
    pieces: dict[int, list[tuple[int, float, float]]] = {}
    xs, ys = mesh.xs, mesh.ys
    h = mesh.h
    eps = 1e-12 * h
    for k in range(domain.n_edges):
        a, b = domain.edge(k)
        d = b - a
        L = math.hypot(d[0], d[1])
        if L < eps:
            continue
        ts = [0.0, 1.0]
        if abs(d[0]) > eps:
            t = (xs - a[0]) / d[0]
            ts.extend(t[(t > 0.0) & (t < 1.0)].tolist())
        if abs(d[1]) > eps:
            t = (ys - a[1]) / d[1]
            ts.extend(t[(t > 0.0) & (t < 1.0)].tolist())
        ts = sorted(set(ts))
        for t0, t1 in zip(ts[:-1], ts[1:]):
            if (t1 - t0) * L < eps:
                continue
            mid = a + 0.5 * (t0 + t1) * d
            owner = None
            ix = (mid[0] - mesh.x0) / h
            iy = (mid[1] - mesh.y0) / h
            on_x = abs(ix - round(ix)) < 1e-9
            on_y = abs(iy - round(iy)) < 1e-9
            cands = []
            ix0, iy0 = int(math.floor(ix)), int(math.floor(iy))
            for dx in ((-1, 0) if on_x else (0,)):
                for dy in ((-1, 0) if on_y else (0,)):
                    jx, jy = int(round(ix)) + dx if on_x else ix0, \
                             int(round(iy)) + dy if on_y else iy0
                    if 0 <= jx < mesh.nx and 0 <= jy < mesh.ny:
                        cands.append(mesh.cell_index(jx, jy))
            for c in sorted(cands):
                if c in active:
                    owner = c
                    break
            if owner is None:
                continue
            pieces.setdefault(owner, []).append((k, t0, t1))
    return pieces


def classify_elements(mesh: ReferenceMesh, domain: PolygonDomain) -> ActiveMesh:
    """Partition cells into interior / cut / exterior and collect the
    ghost-face set.

    A cell is active when its intersection with the domain has positive
    area; it is cut when additionally the polygon boundary meets its
    closure and the exterior overlap exceeds ``CUT_EXTERIOR_REL_AREA * h^2``.
    """
    poly = domain.shape
    h = mesh.h
    cell_area = h * h
    nx, ny = mesh.nx, mesh.ny

    # Quick vectorized center test plus an edge search tree: cells whose
    # closure stays away from the boundary are decided by their center.
    verts = domain.vertices
    segs = [LineString([verts[i], verts[(i + 1) % len(verts)]])
            for i in range(len(verts))]
    tree = shapely.STRtree(segs)

    centers_x = mesh.x0 + h * (np.arange(nx) + 0.5)
    centers_y = mesh.y0 + h * (np.arange(ny) + 0.5)
    CX, CY = np.meshgrid(centers_x, centers_y, indexing="xy")
    center_inside = shapely.contains_xy(poly, CX.ravel(), CY.ravel())

    active, cut, inside = [], [], []
    cell_clips: dict[int, list[np.ndarray]] = {}
    cell_areas: dict[int, float] = {}

    boundary = poly.boundary
    for c in range(mesh.n_cells):
        x0, y0, x1, y1 = mesh.cell_bounds(c)
        hits = tree.query(box(x0, y0, x1, y1))
        if len(hits) == 0:
            if center_inside[c]:
                active.append(c)
                inside.append(c)
                cell_areas[c] = cell_area
            continue
        b = box(x0, y0, x1, y1)
        inter = poly.intersection(b)
        parts = _polygon_parts(inter)
        a_in = sum(p.area for p in parts)
        if a_in <= 0.0:
            continue
        active.append(c)
        cell_areas[c] = a_in
        exterior_area = cell_area - a_in
        is_cut = boundary.intersects(b) and exterior_area >= CUT_EXTERIOR_REL_AREA * cell_area
        if is_cut:
            cut.append(c)
            keep = []
            for p in parts:
                if p.area >= SLIVER_REL_AREA * cell_area:
                    if p.interiors:
                        raise GeometryError("non-simple cell/domain intersection")
                    keep.append(np.asarray(p.exterior.coords)[:-1])
            cell_clips[c] = keep
        else:
            inside.append(c)

    active_set = set(active)
    cut_set = set(cut)

    ghost_faces: list[GhostFace] = []
    for c in active:
        ix, iy = mesh.cell_ij(c)
        x0, y0, x1, y1 = mesh.cell_bounds(c)
        # face to the +x neighbor (normal along x)
        if ix + 1 < nx:
            n = mesh.cell_index(ix + 1, iy)
            if n in active_set and (c in cut_set or n in cut_set):
                seg = LineString([(x1, y0), (x1, y1)])
                mat = poly.intersection(seg).length
                ghost_faces.append(GhostFace((c, n), 0, (x1, y0), (x1, y1), mat))
        # face to the +y neighbor (normal along y)
        if iy + 1 < ny:
            n = mesh.cell_index(ix, iy + 1)
            if n in active_set and (c in cut_set or n in cut_set):
                seg = LineString([(x0, y1), (x1, y1)])
                mat = poly.intersection(seg).length
                ghost_faces.append(GhostFace((c, n), 1, (x0, y1), (x1, y1), mat))

    boundary_pieces = _walk_boundary_pieces(mesh, domain, active_set)

    return ActiveMesh(
        mesh=mesh,
        domain=domain,
        active_cells=np.asarray(sorted(active), dtype=int),
        cut_cells=np.asarray(sorted(cut), dtype=int),
        inside_cells=np.asarray(sorted(inside), dtype=int),
        ghost_faces=sorted(ghost_faces, key=lambda f: f.cells),
        cell_clips=cell_clips,
        cell_areas=cell_areas,
        boundary_pieces=boundary_pieces,
    )


def _triangulate(piece: np.ndarray) -> list[np.ndarray]:
    """Exact positive triangulation of a simple polygon piece."""
    poly = Polygon(piece)
    tris = shapely.constrained_delaunay_triangles(poly)
    out = [np.asarray(t.exterior.coords)[:3] for t in tris.geoms]
    total = sum(abs(_signed_area(t)) for t in out)
    if not math.isclose(total, poly.area, rel_tol=1e-9, abs_tol=1e-15):
        raise GeometryError("triangulation failed to cover the clipped region")
    return out


def _subdivide(tri: np.ndarray, levels: int) -> list[np.ndarray]:
    if levels == 0:
        return [tri]
    a, b, c = tri
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    out = []
    for child in (np.array([a, ab, ca]), np.array([ab, b, bc]),
                  np.array([ca, bc, c]), np.array([ab, bc, ca])):
        out.extend(_subdivide(child, levels - 1))
    return out


def clip_element(amesh: ActiveMesh, cell: int, order: int,
                 subdivide: int = 0) -> QuadratureCell:
    """Quadrature for (cell ∩ domain) with ``order`` Gauss points per
    direction (tensor rule on uncut cells, triangle rules on clipped
    pieces).  ``subdivide`` refines each triangle 4-fold that many times.
    """
    if not amesh.is_active(cell):
        raise GeometryError(f"cell {cell} is not active")
    x0, y0, x1, y1 = amesh.mesh.cell_bounds(cell)
    if not amesh.is_cut(cell):
        xs, ws = gauss_legendre(order)
        px = x0 + (x1 - x0) * xs
        py = y0 + (y1 - y0) * xs
        PX, PY = np.meshgrid(px, py, indexing="ij")
        W = np.outer(ws, ws) * (x1 - x0) * (y1 - y0)
        return QuadratureCell(np.column_stack([PX.ravel(), PY.ravel()]),
                              W.ravel(), cell)
    pts, wts = [], []
    for piece in amesh.cell_clips.get(cell, []):
        for tri in _triangulate(piece):
            for sub in _subdivide(tri, subdivide):
                p, w = map_to_triangle(sub, order)
                pts.append(p)
                wts.append(w)
    if not pts:
        return QuadratureCell(np.zeros((0, 2)), np.zeros(0), cell)
    return QuadratureCell(np.vstack(pts), np.concatenate(wts), cell)


def boundary_quadrature(amesh: ActiveMesh, cell: int, order: int) -> BoundaryQuadrature:
    """Gauss rule along ∂domain inside ``cell`` with outward unit normals.

    Normals come from rotating the CCW edge direction by -90 degrees.
    """
    if not amesh.is_active(cell):
        raise GeometryError(f"cell {cell} is not active")
    pieces = amesh.boundary_pieces.get(cell)
    if not pieces:
        raise GeometryError(f"no domain boundary inside cell {cell}")
    xs, ws = gauss_legendre(order)
    pts, wts, nrm, eids = [], [], [], []
    for k, t0, t1 in pieces:
        a, b = amesh.domain.edge(k)
        d = b - a
        L = math.hypot(d[0], d[1])
        sub_len = (t1 - t0) * L
        t = t0 + (t1 - t0) * xs
        pts.append(a + np.outer(t, d))
        wts.append(ws * sub_len)
        n = np.array([d[1], -d[0]]) / L
        nrm.append(np.tile(n, (len(xs), 1)))
        eids.append(np.full(len(xs), k, dtype=int))
    return BoundaryQuadrature(np.vstack(pts), np.concatenate(wts),
                              np.vstack(nrm), np.concatenate(eids), cell)
