"""scikit-learn style front end for the cut solver.

``CutPoissonSolver`` follows the estimator protocol: hyperparameters in
``__init__`` (untouched until ``fit``), ``fit(problem)`` assembling and
solving one discretization, fitted state in trailing-underscore
attributes, and ``predict`` evaluating the discrete solution at physical
points.  ``get_params``/``set_params``/``clone`` compose with the usual
scikit-learn machinery, which the study harnesses use for refinement
sweeps.
"""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.base import BaseEstimator

from . import analysis
from .assembly import NitscheParams, assemble_system
from .geometry import build_reference_mesh, classify_elements, corner_centered_shift
from .mapping import GradedMap, default_gamma, min_gamma
from .problems import ProblemError
from .solve import solve
from .splines import build_space


def check_scalar(value, name: str, *, positive: bool = False,
                 nonnegative: bool = False) -> float:
    if not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if positive and v <= 0.0:
        raise ValueError(f"{name} must be positive, got {v}")
    if nonnegative and v < 0.0:
        raise ValueError(f"{name} must be nonnegative, got {v}")
    return v


def check_choice(value, name: str, choices: tuple) -> object:
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")
    return value


def resolve_fix(fix) -> bool | str:
    if fix in (True, "on"):
        return True
    if fix in (False, "off"):
        return False
    if fix == "auto":
        return "auto"
    raise ValueError(f"fix must be 'auto', 'on'/'off' or a bool, got {fix!r}")


class CutPoissonSolver(BaseEstimator):
    """Graded parametric cut solver for the Poisson problem.

    Parameters
    ----------
    h : float
        Reference mesh size.
    p : int
        Spline degree.
    regularity : int or None
        Continuity class across cells; ``None`` means maximal (p - 1).
    gamma : float or "auto"
        Radial grading exponent; "auto" picks ``2 p``, which covers every
        opening angle.
    beta, tau : float
        Nitsche boundary penalty and ghost-penalty scale.
    shift : pair of floats, "center", or "zero"
        Grid shift in [0, h)^2.  "center" places the singular corner at a
        cell center.
    fix : "auto", "on"/"off" or bool
        Disjoint-support DOF splitting; "auto" enables it only when the
        domain has a slit-like feature.
    solver : "direct" or "cg"
    quad_order : int or None
        Gauss points per direction for assembly (default p + 2).
    tol : float
        Linear-solver relative residual tolerance.
    """

    def __init__(self, h=0.1, p=2, regularity=None, gamma="auto", beta=100.0,
                 tau=0.1, shift=(0.0, 0.0), fix="auto", solver="direct",
                 quad_order=None, tol=1e-10):
        self.h = h
        self.p = p
        self.regularity = regularity
        self.gamma = gamma
        self.beta = beta
        self.tau = tau
        self.shift = shift
        self.fix = fix
        self.solver = solver
        self.quad_order = quad_order
        self.tol = tol

    # -- validation -----------------------------------------------------------
    def _validated(self) -> dict:
        h = check_scalar(self.h, "h", positive=True)
        if h > 1.0:
            raise ValueError(f"h must not exceed 1, got {h}")
        if not isinstance(self.p, numbers.Integral) or self.p < 1:
            raise ValueError(f"degree p must be an integer >= 1, got {self.p!r}")
        p = int(self.p)
        r = p - 1 if self.regularity is None else int(self.regularity)
        if not (0 <= r <= p - 1):
            raise ValueError(f"regularity must lie in [0, {p - 1}], got {r}")
        if self.gamma == "auto":
            gamma = default_gamma(p)
        else:
            gamma = check_scalar(self.gamma, "gamma", positive=True)
        beta = check_scalar(self.beta, "beta", positive=True)
        tau = check_scalar(self.tau, "tau", nonnegative=True)
        if self.shift == "center":
            shift = corner_centered_shift(h)
        elif self.shift == "zero":
            shift = (0.0, 0.0)
        else:
            shift = (check_scalar(self.shift[0], "shift[0]", nonnegative=True),
                     check_scalar(self.shift[1], "shift[1]", nonnegative=True))
            if shift[0] >= h or shift[1] >= h:
                raise ValueError("shift components must be smaller than h")
        check_choice(self.solver, "solver", ("direct", "cg"))
        quad_order = None if self.quad_order is None else int(self.quad_order)
        tol = check_scalar(self.tol, "tol", positive=True)
        return dict(h=h, p=p, r=r, gamma=gamma, beta=beta, tau=tau,
                    shift=shift, fix=resolve_fix(self.fix),
                    solver=self.solver, quad_order=quad_order, tol=tol)

    # -- estimator protocol ---------------------------------------------------
    def fit(self, problem, y=None):
        """Assemble and solve the given problem.

        ``problem`` provides ``domain()``, ``source``, ``dirichlet`` and,
        when an exact solution is known, ``exact``/``exact_grad`` (then an
        :class:`~gradedfem.analysis.ErrorReport` lands in ``report_``).
        """
        cfg = self._validated()
        domain = problem.domain()
        omega = getattr(problem, "omega", None)
        if self.gamma == "auto" and omega is not None:
            assert cfg["gamma"] > min_gamma(cfg["p"], omega)
        mesh = build_reference_mesh(cfg["h"], cfg["shift"])
        amesh = classify_elements(mesh, domain)
        space = build_space(amesh, cfg["p"], cfg["r"], split=cfg["fix"])
        gmap = GradedMap(cfg["gamma"])
        params = NitscheParams(beta=cfg["beta"], tau=cfg["tau"])
        system = assemble_system(space, gmap, params,
                                 f=problem.source, g=problem.dirichlet,
                                 quad_order=cfg["quad_order"])
        rep = solve(system, tol=cfg["tol"], method=cfg["solver"])

        self.config_ = cfg
        self.domain_ = domain
        self.amesh_ = amesh
        self.space_ = space
        self.gmap_ = gmap
        self.params_ = params
        self.system_ = system
        self.solve_report_ = rep
        self.solution_ = rep.solution
        self.n_dofs_ = space.n_dofs
        self.report_ = None
        if getattr(problem, "has_exact", False):
            self.report_ = analysis.compute_errors(
                rep.solution, problem, space, gmap, params)
        return self

    def predict(self, X) -> np.ndarray:
        """Discrete solution at physical points (NaN outside the domain)."""
        self._check_fitted()
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        ref = self.gmap_.inverse(pts)
        return self.predict_reference(ref, mask_outside=True)

    def predict_reference(self, X, mask_outside: bool = False) -> np.ndarray:
        """Discrete solution at reference points."""
        self._check_fitted()
        pts = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(len(pts), np.nan)
        inside = self.domain_.contains_points(pts) if mask_outside \
            else np.ones(len(pts), dtype=bool)
        for i, pt in enumerate(pts):
            if not inside[i]:
                continue
            try:
                be = self.space_.eval_point(pt, 0)
            except Exception:
                continue
            out[i] = self.solution_[be.local_dofs] @ be.values
        return out

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            raise ProblemError("estimator is not fitted; call fit(problem) first")
