"""Error measurement, convergence-rate fitting and robustness studies.

Errors are integrated in the reference domain: the squared L2 error
carries the radial measure weight, the H1 semi-error uses the B-weighted
gradient (both identities with the physical-domain norms), and the
energy norm adds the mesh-scaled boundary terms and the ghost-penalty
energy of the discrete part.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone

from .assembly import NitscheParams, ghost_energy
from .geometry import ActiveMesh, boundary_quadrature, clip_element
from .mapping import GradedMap
from .splines import SplineSpace


class AnalysisError(ValueError):
    pass


def n_jobs_from_env() -> int:
    try:
        return max(1, int(os.environ.get("GRADEDFEM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class ErrorReport:
    """Per-run error norms and the parameters that produced them."""

    h: float
    l2: float
    h1_semi: float
    energy: float
    n_dofs: int
    gamma: float
    omega: float | None
    p: int
    beta: float
    tau: float
    shift: tuple[float, float]

    def to_dict(self) -> dict:
        return {
            "h": self.h, "l2": self.l2, "h1_semi": self.h1_semi,
            "energy": self.energy, "n_dofs": self.n_dofs, "gamma": self.gamma,
            "omega": self.omega, "p": self.p, "beta": self.beta,
            "tau": self.tau, "shift": list(self.shift),
        }


@dataclass
class RateTable:
    """Errors across a refinement series plus fitted rates."""

    hs: list[float]
    errors: dict[str, list[float]]
    n_dofs: list[int]
    reports: list[ErrorReport] = field(default_factory=list)

    @property
    def fitted_rate(self) -> dict[str, float]:
        return {norm: fit_rates(self.hs, errs)
                for norm, errs in self.errors.items()}

    def rolling_rates(self, norm: str) -> list[float | None]:
        errs = self.errors[norm]
        out: list[float | None] = [None]
        for i in range(1, len(errs)):
            out.append(math.log(errs[i - 1] / errs[i])
                       / math.log(self.hs[i - 1] / self.hs[i]))
        return out


def fit_rates(hs, errors) -> float:
    """Least-squares slope of log error against log h over the last three
    refinement levels."""
    if len(hs) < 3 or len(errors) < 3:
        raise AnalysisError("rate fitting needs at least 3 refinement levels")
    x = np.log(np.asarray(hs[-3:], dtype=float))
    y = np.log(np.asarray(errors[-3:], dtype=float))
    A = np.vstack([x, np.ones_like(x)]).T
    slope, _ = np.linalg.lstsq(A, y, rcond=None)[0]
    return float(slope)


def reference_exact(problem, gmap: GradedMap, points: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Exact solution pulled back to reference points: value and
    reference-coordinate gradient (Jacobian-transposed physical one)."""
    phys = gmap.forward(points)
    u = problem.exact(phys)
    J = gmap.jacobian(points)
    g = np.einsum("nba,nb->na", J, problem.exact_grad(phys))
    return u, g


def _corner_cells(amesh: ActiveMesh) -> list[int]:
    corner = amesh.domain.corner_index
    if corner is None:
        return []
    cx, cy = amesh.domain.vertices[corner]
    out = []
    tol = 1e-12
    for c in amesh.active_cells:
        x0, y0, x1, y1 = amesh.mesh.cell_bounds(int(c))
        if x0 - tol <= cx <= x1 + tol and y0 - tol <= cy <= y1 + tol:
            out.append(int(c))
    return out


def compute_errors(solution: np.ndarray, problem, space: SplineSpace,
                   gmap: GradedMap, params: NitscheParams,
                   quad_order: int | None = None,
                   corner_refine: int = 3) -> ErrorReport:
    """L2, H1-semi and energy norms of the discretization error.

    Quadrature defaults to ``p + 3`` points per direction with refined
    triangles on the cells touching the singular corner, where the exact
    solution has its weakest derivatives.
    """
    amesh = space.mesh
    h = amesh.mesh.h
    order = space.p + 3 if quad_order is None else quad_order
    subdiv = {c: corner_refine for c in _corner_cells(amesh)}

    l2_sq = 0.0
    h1_sq = 0.0
    for c in amesh.active_cells:
        c = int(c)
        q = clip_element(amesh, c, order, subdivide=subdiv.get(c, 0))
        if len(q.weights) == 0:
            continue
        ue, ge = reference_exact(problem, gmap, q.points)
        ders = space.eval_cell(c, q.points, 1)
        co = solution[space.dof_map.cell_dofs[c]]
        e = ue - co @ ders[0, 0]
        gerr = ge - np.stack([co @ ders[1, 0], co @ ders[0, 1]], axis=1)
        w = gmap.load_weight(q.points)
        B = gmap.b_matrix(q.points)
        l2_sq += float(np.sum(q.weights * w * e * e))
        h1_sq += float(np.sum(q.weights * np.einsum("na,nab,nb->n", gerr, B, gerr)))

    bnd_grad = 0.0
    bnd_val = 0.0
    for c in amesh.boundary_cells:
        bq = boundary_quadrature(amesh, c, order)
        keep = np.array([amesh.domain.edge_marker(int(k)) is None
                         for k in bq.edge_ids])
        if not np.any(keep):
            continue
        pts, w = bq.points[keep], bq.weights[keep]
        ue, ge = reference_exact(problem, gmap, pts)
        ders = space.eval_cell(c, pts, 1)
        co = solution[space.dof_map.cell_dofs[c]]
        e = ue - co @ ders[0, 0]
        gerr = ge - np.stack([co @ ders[1, 0], co @ ders[0, 1]], axis=1)
        bnd_grad += float(np.sum(w * np.sum(gerr * gerr, axis=1)))
        bnd_val += float(np.sum(w * e * e))

    # the exact solution contributes no derivative jumps across interior
    # faces, so the ghost term of the error is that of the discrete part
    ghost = ghost_energy(space, params, solution)
    energy = math.sqrt(h1_sq + h * bnd_grad + params.beta / h * bnd_val + ghost)
    return ErrorReport(
        h=h, l2=math.sqrt(l2_sq), h1_semi=math.sqrt(h1_sq), energy=energy,
        n_dofs=space.n_dofs, gamma=gmap.gamma,
        omega=getattr(problem, "omega", None), p=space.p,
        beta=params.beta, tau=params.tau, shift=amesh.mesh.shift,
    )


def convergence_study(estimator, problem, h_series, n_jobs: int | None = None
                      ) -> RateTable:
    """Fit the estimator on a refinement series and tabulate the errors."""
    if len(h_series) < 1:
        raise AnalysisError("empty refinement series")
    n_jobs = n_jobs_from_env() if n_jobs is None else n_jobs

    def run(h):
        est = clone(estimator)
        est.set_params(h=float(h))
        est.fit(problem)
        return est.report_

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            reports = list(ex.map(run, h_series))
    else:
        reports = [run(h) for h in h_series]
    return RateTable(
        hs=[r.h for r in reports],
        errors={"l2": [r.l2 for r in reports],
                "h1_semi": [r.h1_semi for r in reports],
                "energy": [r.energy for r in reports]},
        n_dofs=[r.n_dofs for r in reports],
        reports=reports,
    )


def mesh_shift_study(estimator, problem, h: float, n_trials: int, seed: int,
                     n_jobs: int | None = None) -> dict:
    """Error statistics over uniformly random grid shifts in [0, h)^2."""
    if n_trials < 2:
        raise AnalysisError("shift study needs at least 2 trials")
    n_jobs = n_jobs_from_env() if n_jobs is None else n_jobs
    rng = np.random.default_rng(seed)
    shifts = rng.uniform(0.0, h, size=(n_trials, 2))
    # keep shifts strictly inside [0, h)
    shifts = np.minimum(shifts, h * (1.0 - 1e-12))

    def run(i):
        est = clone(estimator)
        est.set_params(h=h, shift=(float(shifts[i, 0]), float(shifts[i, 1])))
        try:
            est.fit(problem)
        except Exception as exc:
            raise AnalysisError(f"trial {i} with shift {shifts[i]} failed: {exc}") from exc
        return est.report_

    idx = list(range(n_trials))
    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            reports = list(ex.map(run, idx))
    else:
        reports = [run(i) for i in idx]

    out = {"h": h, "seed": seed, "n_trials": n_trials,
           "shifts": shifts.tolist(), "reports": reports}
    for norm in ("l2", "h1_semi"):
        vals = np.array([getattr(r, norm) for r in reports])
        mean = float(vals.mean())
        std = float(vals.std(ddof=1)) if n_trials > 1 else 0.0
        out[norm] = {"values": vals.tolist(), "mean": mean, "std": std,
                     "rel_std": std / mean if mean > 0 else 0.0}
    return out
