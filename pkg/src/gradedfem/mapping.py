"""Radial grading map, its composite extension and pullback weights.

The core map scales radii about the origin, ``(r, theta) -> (r^gamma,
theta)``, written in Cartesian form as ``q -> |q|^(gamma-1) q`` so there
are no angle branch cuts.  Pulling the Laplacian back through it turns
the stiffness integrand into ``grad v . B grad w`` with a symmetric
unit-determinant matrix ``B`` whose eigenvalues are ``gamma`` and
``1/gamma``, and the volume measure into ``gamma (x^2+y^2)^(gamma-1)``.
An optional smooth post-map (e.g. a rigid placement of a patch) composes
on the outside.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PostMap:
    """Smooth bijective planar map with an analytic Jacobian."""

    forward: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]


def rigid_map(angle: float = 0.0, translation=(0.0, 0.0)) -> PostMap:
    """Rotation by ``angle`` followed by a translation."""
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    t = np.asarray(translation, dtype=float)

    def fwd(p):
        return np.asarray(p, float) @ R.T + t

    def jac(p):
        n = np.atleast_2d(p).shape[0]
        return np.broadcast_to(R, (n, 2, 2)).copy()

    def inv(p):
        return (np.asarray(p, float) - t) @ R

    return PostMap(fwd, jac, inv)


def _as_points(points) -> tuple[np.ndarray, bool]:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        return p[None, :], True
    return p, False


def _radial_scale(pts: np.ndarray, exponent: float) -> np.ndarray:
    """``|q|^exponent * q`` with the origin mapped to the origin."""
    r = np.hypot(pts[:, 0], pts[:, 1])
    s = np.zeros_like(r)
    nz = r > 0.0
    s[nz] = r[nz] ** exponent
    return s[:, None] * pts


@dataclass(frozen=True)
class GradedMap:
    """Radial grading with exponent ``gamma`` plus optional post map."""

    gamma: float
    post_map: PostMap | None = None

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError(f"grading exponent must be positive, got {self.gamma}")
        if self.post_map is not None:
            # nonsingularity spot check on a coarse sample of [-1,1]^2
            g = np.linspace(-1.0, 1.0, 9)
            X, Y = np.meshgrid(g, g)
            J = self.post_map.jacobian(np.column_stack([X.ravel(), Y.ravel()]))
            det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
            if np.any(np.abs(det) < 1e-12):
                raise ValueError("post map Jacobian is singular on [-1, 1]^2")

    def forward(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        out = _radial_scale(pts, self.gamma - 1.0)
        if self.post_map is not None:
            out = self.post_map.forward(out)
        return out[0] if single else out

    def inverse(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        if self.post_map is not None:
            pts = np.atleast_2d(self.post_map.inverse(pts))
        out = _radial_scale(pts, 1.0 / self.gamma - 1.0)
        return out[0] if single else out

    def jacobian(self, points) -> np.ndarray:
        """Jacobian of the full (composite) map at reference points."""
        pts, single = _as_points(points)
        J = _graded_jacobian(self.gamma, pts)
        if self.post_map is not None:
            mid = _radial_scale(pts, self.gamma - 1.0)
            J = np.einsum("nab,nbc->nac", self.post_map.jacobian(mid), J)
        return J[0] if single else J

    def b_matrix(self, points) -> np.ndarray:
        """Pullback diffusion matrix of the composite map."""
        if self.post_map is None:
            pts, single = _as_points(points)
            B = b_matrix(self.gamma, pts)
            return B[0] if single else B
        pts, single = _as_points(points)
        J = self.jacobian(pts)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1]
        Jinv[:, 1, 1] = J[:, 0, 0]
        Jinv[:, 0, 1] = -J[:, 0, 1]
        Jinv[:, 1, 0] = -J[:, 1, 0]
        Jinv /= det[:, None, None]
        B = np.abs(det)[:, None, None] * np.einsum("nab,ncb->nac", Jinv, Jinv)
        return B[0] if single else B

    def load_weight(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        w = load_weight(self.gamma, pts)
        if self.post_map is not None:
            mid = _radial_scale(pts, self.gamma - 1.0)
            J = self.post_map.jacobian(mid)
            w = w * np.abs(J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])
        return w[0] if single else w

    def mesh_function(self, h: float, points) -> np.ndarray:
        return mesh_function(self.gamma, h, points)


def _graded_jacobian(gamma: float, pts: np.ndarray) -> np.ndarray:
    r = np.hypot(pts[:, 0], pts[:, 1])
    J = np.zeros((len(pts), 2, 2))
    nz = r > 0.0
    rg = r[nz] ** (gamma - 1.0)
    outer = pts[nz, :, None] * pts[nz, None, :] / (r[nz] ** 2)[:, None, None]
    J[nz] = rg[:, None, None] * (np.eye(2) + (gamma - 1.0) * outer)
    if np.any(~nz):
        J[~nz] = np.eye(2) if gamma == 1.0 else 0.0
    return J


_warned_origin = False


def b_matrix(gamma: float, points) -> np.ndarray:
    """Symmetric positive definite pullback matrix of the radial grading.

    Equals the rotation conjugate of ``diag(1/gamma, gamma)`` by the
    polar angle; det = 1 and trace = gamma + 1/gamma everywhere.  At the
    exact origin the angle is undefined; the zero-angle value is returned
    and a diagnostic is logged (quadrature never lands there).
    """
    if gamma <= 0.0:
        raise ValueError("grading exponent must be positive")
    pts, single = _as_points(points)
    r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    B = np.empty((len(pts), 2, 2))
    nz = r2 > 0.0
    c2 = np.where(nz, pts[:, 0] ** 2 / np.where(nz, r2, 1.0), 1.0)
    s2 = 1.0 - c2
    cs = np.where(nz, pts[:, 0] * pts[:, 1] / np.where(nz, r2, 1.0), 0.0)
    gi = 1.0 / gamma
    B[:, 0, 0] = gi * c2 + gamma * s2
    B[:, 1, 1] = gi * s2 + gamma * c2
    B[:, 0, 1] = B[:, 1, 0] = (gi - gamma) * cs
    if np.any(~nz):
        global _warned_origin
        if not _warned_origin:
            logger.warning("diffusion matrix requested at the singular corner; "
                           "returning the zero-angle limit diag(1/gamma, gamma)")
            _warned_origin = True
    return B[0] if single else B


def load_weight(gamma: float, points) -> np.ndarray:
    """Volume measure weight ``gamma * (x^2 + y^2)^(gamma - 1)``."""
    pts, single = _as_points(points)
    r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
    if gamma == 1.0:
        w = np.ones_like(r2)
    else:
        with np.errstate(divide="ignore"):
            w = gamma * r2 ** (gamma - 1.0)
    return w[0] if single else w


def mesh_function(gamma: float, h: float, points) -> np.ndarray:
    """Physical-coordinate mesh size ``h * r^(gamma - 1)`` (reporting only)."""
    pts, single = _as_points(points)
    r = np.hypot(pts[:, 0], pts[:, 1])
    if gamma == 1.0:
        w = np.full_like(r, h)
    else:
        with np.errstate(divide="ignore"):
            w = h * r ** (gamma - 1.0)
    return w[0] if single else w


def min_gamma(p: int, omega: float) -> float:
    """Strict lower bound on the grading exponent for degree ``p`` and
    opening angle ``omega``; any angle is covered by ``gamma = 2 p``."""
    if p < 1:
        raise ValueError("degree must be at least 1")
    if not (math.pi < omega < 2.0 * math.pi):
        raise ValueError("opening angle must lie in (pi, 2*pi)")
    return p * omega / math.pi


def default_gamma(p: int) -> float:
    return 2.0 * p


def alpha_powers(p: int, gamma: float) -> np.ndarray:
    """Radial weight exponents ``alpha_1..alpha_{p+1}`` for which the
    weighted norm of the corner solution stays finite after grading."""
    if gamma <= 0.0:
        raise ValueError("grading exponent must be positive")
    a_top = p * (gamma - 1.0) / gamma
    j = np.arange(1, p + 2)
    return a_top - (p + 1 - j)
