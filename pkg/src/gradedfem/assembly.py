"""Assembly of the reference-domain system.

The bilinear form combines the B-weighted Dirichlet integral over the
clipped cells, symmetric Nitsche terms on the embedded boundary with the
uniform reference mesh size in the penalty, and a ghost penalty summing
jumps of all derivative orders 1..p across faces near the cut boundary.
The load carries the radial measure weight of the grading map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import (ActiveMesh, BoundaryQuadrature, QuadratureCell,
                       boundary_quadrature, clip_element, gauss_legendre)
from .mapping import GradedMap
from .splines import DofMap, SplineSpace


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True)
class NitscheParams:
    """Penalty parameters: boundary penalty ``beta``, ghost scale ``tau``."""

    beta: float = 100.0
    tau: float = 0.1

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError("boundary penalty must be positive")
        if self.tau < 0.0:
            raise ValueError("ghost-penalty scale must be nonnegative")


@dataclass
class AssembledSystem:
    """Sparse symmetric system with its DOF metadata."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: DofMap
    params: NitscheParams
    space: SplineSpace
    gmap: GradedMap
    ghost_matrix: sp.csr_matrix
    quad_order: int

    @property
    def n_dofs(self) -> int:
        return self.dof_map.n_dofs


class _COO:
    """Deterministic triplet accumulator."""

    def __init__(self):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []

    def add_block(self, dofs: np.ndarray, block: np.ndarray):
        n = len(dofs)
        self.rows.append(np.repeat(dofs, n))
        self.cols.append(np.tile(dofs, n))
        self.vals.append(block.ravel())

    def matrix(self, n: int) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix((n, n))
        A = sp.coo_matrix((np.concatenate(self.vals),
                           (np.concatenate(self.rows), np.concatenate(self.cols))),
                          shape=(n, n))
        return A.tocsr()


def volume_quadratures(amesh: ActiveMesh, order: int,
                       subdivide_cells: dict[int, int] | None = None
                       ) -> dict[int, QuadratureCell]:
    """Clip quadrature for every active cell, optionally refining some."""
    subdivide_cells = subdivide_cells or {}
    return {int(c): clip_element(amesh, int(c), order,
                                 subdivide=subdivide_cells.get(int(c), 0))
            for c in amesh.active_cells}


def assemble_volume(space: SplineSpace, gmap: GradedMap,
                    quads: dict[int, QuadratureCell]) -> _COO:
    """Entries of the B-weighted Dirichlet form over the clipped cells."""
    coo = _COO()
    for c in sorted(quads):
        q = quads[c]
        if len(q.weights) == 0:
            continue
        B = gmap.b_matrix(q.points)
        ders = space.eval_cell(c, q.points, 1)
        G = np.stack([ders[1, 0], ders[0, 1]])          # (2, nloc, nq)
        E = np.einsum("q,qab,anq,bmq->nm", q.weights, B, G, G, optimize=True)
        E = 0.5 * (E + E.T)
        coo.add_block(space.dof_map.cell_dofs[c], E)
    return coo


def assemble_load(space: SplineSpace, gmap: GradedMap,
                  quads: dict[int, QuadratureCell], f) -> np.ndarray:
    """Load vector with the grading measure weight; ``f`` takes physical
    points."""
    rhs = np.zeros(space.n_dofs)
    if f is None:
        return rhs
    for c in sorted(quads):
        q = quads[c]
        if len(q.weights) == 0:
            continue
        w = gmap.load_weight(q.points)
        fv = np.asarray(f(gmap.forward(q.points)), dtype=float)
        vals = space.eval_cell(c, q.points, 0)[0, 0]
        rhs[space.dof_map.cell_dofs[c]] += vals @ (q.weights * w * fv)
    return rhs


def assemble_nitsche_boundary(space: SplineSpace, gmap: GradedMap,
                              params: NitscheParams, order: int, g=None
                              ) -> tuple[_COO, np.ndarray]:
    """Symmetric Nitsche boundary terms and matching right-hand side.

    Only edges without a marker (exterior Dirichlet boundary) are
    assembled; marked edges belong to patch interfaces.
    """
    amesh = space.mesh
    h = amesh.mesh.h
    beta_h = params.beta / h
    coo = _COO()
    rhs = np.zeros(space.n_dofs)
    for c in amesh.boundary_cells:
        bq = boundary_quadrature(amesh, c, order)
        keep = np.array([amesh.domain.edge_marker(int(k)) is None
                         for k in bq.edge_ids])
        if not np.any(keep):
            continue
        pts = bq.points[keep]
        w = bq.weights[keep]
        nrm = bq.normals[keep]
        B = gmap.b_matrix(pts)
        ders = space.eval_cell(c, pts, 1)
        v = ders[0, 0]                                   # (nloc, nq)
        G = np.stack([ders[1, 0], ders[0, 1]])           # (2, nloc, nq)
        Bn = np.einsum("qab,qb->qa", B, nrm)             # (nq, 2)
        flux = np.einsum("qa,anq->nq", Bn, G)            # conormal n.B grad
        vw = v * w
        E = -flux @ vw.T - vw @ flux.T + beta_h * (vw @ v.T)
        E = 0.5 * (E + E.T)
        dofs = space.dof_map.cell_dofs[c]
        coo.add_block(dofs, E)
        if g is not None:
            gv = np.asarray(g(gmap.forward(pts)), dtype=float)
            rhs[dofs] += (beta_h * vw - flux * w) @ gv
    return coo, rhs


def _derivative_multiindices(j: int) -> list[tuple[int, int, float]]:
    """Multi-indices (a, b) with a + b = j and their multinomial weights,
    realizing the Frobenius pairing of the full j-th derivative tensor."""
    return [(a, j - a, float(math.comb(j, a))) for a in range(j + 1)]


def _face_gauss(face, order: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ws = gauss_legendre(order)
    p0 = np.asarray(face.p0)
    p1 = np.asarray(face.p1)
    return p0 + np.outer(xs, p1 - p0), ws * face.length


def assemble_ghost_penalty(space: SplineSpace, params: NitscheParams,
                           order: int | None = None) -> _COO:
    """Ghost penalty: jumps of derivative orders 1..p across ghost faces,
    scaled by ``tau * h^(2j-1)``.

    Faces whose two sides hold split copies of the same basis function
    (slit-separated support components) are skipped; penalizing across
    the void would re-introduce the coupling the splitting removed.
    """
    amesh = space.mesh
    p = space.p
    h = amesh.mesh.h
    order = p + 1 if order is None else order
    coo = _COO()
    dof_map = space.dof_map
    scales = [params.tau * h ** (2 * j - 1) for j in range(p + 1)]
    for face in amesh.ghost_faces:
        c1, c2 = face.cells
        dofs1 = dof_map.cell_dofs[c1]
        dofs2 = dof_map.cell_dofs[c2]
        if dof_map.split and _face_splits_support(space, c1, c2, dofs1, dofs2):
            continue
        pts, w = _face_gauss(face, order)
        d1 = space.eval_cell(c1, pts, p)
        d2 = space.eval_cell(c2, pts, p)
        union = np.unique(np.concatenate([dofs1, dofs2]))
        i1 = np.searchsorted(union, dofs1)
        i2 = np.searchsorted(union, dofs2)
        E = np.zeros((len(union), len(union)))
        nq = len(w)
        for j in range(1, p + 1):
            for a, b, mult in _derivative_multiindices(j):
                J = np.zeros((len(union), nq))
                np.add.at(J, i1, d1[a, b])
                np.subtract.at(J, i2, d2[a, b])
                E += (scales[j] * mult) * ((J * w) @ J.T)
        E = 0.5 * (E + E.T)
        coo.add_block(union, E)
    return coo


def ghost_energy(space: SplineSpace, params: NitscheParams,
                 coeffs: np.ndarray, order: int | None = None) -> float:
    """Ghost-penalty energy of a discrete function by direct face-jump
    quadrature.

    Jumps are formed pointwise before squaring, so functions with
    continuous derivatives (global polynomials in maximally smooth
    spaces) evaluate to an exact-cancellation level far below what the
    assembled quadratic form can resolve.
    """
    amesh = space.mesh
    p = space.p
    h = amesh.mesh.h
    order = p + 1 if order is None else order
    dof_map = space.dof_map
    total = 0.0
    for face in amesh.ghost_faces:
        c1, c2 = face.cells
        dofs1 = dof_map.cell_dofs[c1]
        dofs2 = dof_map.cell_dofs[c2]
        if dof_map.split and _face_splits_support(space, c1, c2, dofs1, dofs2):
            continue
        pts, w = _face_gauss(face, order)
        d1 = space.eval_cell(c1, pts, p)
        d2 = space.eval_cell(c2, pts, p)
        co1 = coeffs[dofs1]
        co2 = coeffs[dofs2]
        for j in range(1, p + 1):
            scale = params.tau * h ** (2 * j - 1)
            for a, b, mult in _derivative_multiindices(j):
                jump = co1 @ d1[a, b] - co2 @ d2[a, b]
                total += scale * mult * float(np.sum(w * jump ** 2))
    return total


def _face_splits_support(space: SplineSpace, c1: int, c2: int,
                         dofs1: np.ndarray, dofs2: np.ndarray) -> bool:
    tb1 = space.cell_tensor_basis(c1)
    tb2 = space.cell_tensor_basis(c2)
    m1 = {tuple(t): d for t, d in zip(tb1, dofs1)}
    for t, d in zip(tb2, dofs2):
        other = m1.get(tuple(t))
        if other is not None and other != d:
            return True
    return False


def assemble_system(space: SplineSpace, gmap: GradedMap, params: NitscheParams,
                    f=None, g=None, quad_order: int | None = None) -> AssembledSystem:
    """Assemble matrix and right-hand side for one patch.

    ``f`` and ``g`` are callables on physical points (or ``None`` for
    zero); the default quadrature uses ``p + 2`` points per direction.
    """
    order = space.p + 2 if quad_order is None else quad_order
    quads = volume_quadratures(space.mesh, order)
    vol = assemble_volume(space, gmap, quads)
    nit, rhs_b = assemble_nitsche_boundary(space, gmap, params, order, g)
    ghost = assemble_ghost_penalty(space, params)
    n = space.n_dofs
    S = ghost.matrix(n)
    A = vol.matrix(n) + nit.matrix(n) + S
    A = (A + A.T) * 0.5
    rhs = assemble_load(space, gmap, quads, f) + rhs_b
    return AssembledSystem(matrix=A.tocsr(), rhs=rhs, dof_map=space.dof_map,
                           params=params, space=space, gmap=gmap,
                           ghost_matrix=S.tocsr(), quad_order=order)
