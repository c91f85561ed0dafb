"""Manufactured corner problems and weighted-norm diagnostics.

The workhorse is the harmonic corner solution ``r^(pi/omega) *
sin(theta pi/omega)`` on a unit circle sector with opening angle
``omega`` in (pi, 2 pi): zero source, Dirichlet data given by its trace,
and known closed-form derivatives of every order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PolygonDomain
from .mapping import GradedMap

ANGLE_TOL = 1e-12


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class CornerFrame:
    """Polar frame at a corner: angles measured counterclockwise from the
    boundary edge leaving the corner."""

    vertex: tuple[float, float] = (0.0, 0.0)
    edge_direction: tuple[float, float] = (1.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.edge_direction, dtype=float)
        n = math.hypot(d[0], d[1])
        if abs(n - 1.0) > 1e-12:
            raise ProblemError("edge direction must be a unit vector")

    def polar(self, points: np.ndarray, omega: float | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
        """Local polar coordinates; with ``omega`` the angle is unwrapped
        into [0, omega] and points outside the sector are rejected."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.asarray(self.edge_direction)
        rel = pts - np.asarray(self.vertex)
        x = rel @ d
        y = rel @ np.array([-d[1], d[0]])
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        theta = np.where(theta < -ANGLE_TOL, theta + 2.0 * math.pi, theta)
        theta = np.clip(theta, 0.0, None)
        if omega is not None:
            bad = (theta > omega + ANGLE_TOL) & (r > ANGLE_TOL)
            if np.any(bad):
                raise ProblemError("point outside the sector opening")
            theta = np.minimum(theta, omega)
        return r, theta


def singular_solution(omega: float, r, theta) -> dict[str, np.ndarray]:
    """Corner solution value and first derivatives at polar points.

    Returns value, radial/angular partials, and the Cartesian gradient
    in the frame where the sector opens counterclockwise from the x-axis.
    """
    lam = math.pi / omega
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -ANGLE_TOL) or np.any(theta > omega + ANGLE_TOL):
        raise ProblemError("angle outside [0, omega]")
    s = np.sin(lam * theta)
    c = np.cos(lam * theta)
    with np.errstate(divide="ignore", invalid="ignore"):
        rl = np.where(r > 0.0, r ** lam, 0.0)
        rl1 = np.where(r > 0.0, r ** (lam - 1.0), 0.0)
    value = rl * s
    du_dr = lam * rl1 * s
    du_dtheta = lam * rl * c
    # Cartesian gradient by rotating (d_r, r^-1 d_theta)
    ut = lam * rl1 * c
    du_dx = du_dr * np.cos(theta) - ut * np.sin(theta)
    du_dy = du_dr * np.sin(theta) + ut * np.cos(theta)
    return {"value": value, "du_dr": du_dr, "du_dtheta": du_dtheta,
            "du_dx": du_dx, "du_dy": du_dy}


def singular_polar_derivative(omega: float, m: int, n: int, r, theta) -> np.ndarray:
    """Mixed polar derivative d^m/dr^m d^n/dtheta^n of the corner solution."""
    lam = math.pi / omega
    r = np.asarray(r, dtype=float)
    theta = np.asarray(theta, dtype=float)
    coeff = 1.0
    for i in range(m):
        coeff *= lam - i
    ang = lam ** n * np.sin(lam * theta + n * math.pi / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = np.where(r > 0.0, r ** (lam - m), 0.0)
    return coeff * rad * ang


def total_derivative_sq(omega: float, k: int, r, theta) -> np.ndarray:
    """Squared magnitude of the order-``k`` total derivative in polar
    form: radial part plus all mixed terms with angular factors."""
    r = np.asarray(r, dtype=float)
    out = singular_polar_derivative(omega, k, 0, r, theta) ** 2
    for m in range(0, k):
        for n in range(1, k - m + 1):
            term = r ** (m - k) * singular_polar_derivative(omega, m, n, r, theta)
            out = out + term ** 2
    return out


@dataclass(frozen=True)
class SectorProblem:
    """Unit circle sector with a nonconvex corner at the origin.

    ``smooth_part`` adds ``x^2 y`` to the exact solution, exercising a
    nonzero source term.
    """

    omega: float
    smooth_part: bool = False
    n_arc: int = 4096
    frame: CornerFrame = field(default_factory=CornerFrame)

    def __post_init__(self):
        if not (math.pi < self.omega < 2.0 * math.pi):
            raise ProblemError("opening angle must lie in (pi, 2*pi)")
        if self.n_arc < 64:
            raise ProblemError("arc polygonization needs at least 64 segments")

    @property
    def name(self) -> str:
        return "sector+smooth" if self.smooth_part else "sector"

    @property
    def has_exact(self) -> bool:
        return True

    def domain(self) -> PolygonDomain:
        return sector_polygon(self.omega, self.n_arc)

    def exact(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r, theta = self.frame.polar(pts, self.omega)
        u = singular_solution(self.omega, r, theta)["value"]
        if self.smooth_part:
            u = u + pts[:, 0] ** 2 * pts[:, 1]
        return u

    def exact_grad(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r, theta = self.frame.polar(pts, self.omega)
        d = singular_solution(self.omega, r, theta)
        g = np.column_stack([d["du_dx"], d["du_dy"]])
        ex, ey = self.frame.edge_direction
        if (ex, ey) != (1.0, 0.0):
            g = g @ np.array([[ex, ey], [-ey, ex]])
        if self.smooth_part:
            g = g + np.column_stack([2.0 * pts[:, 0] * pts[:, 1], pts[:, 0] ** 2])
        return g

    def source(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.smooth_part:
            return -2.0 * pts[:, 1]
        return np.zeros(len(pts))

    def dirichlet(self, points) -> np.ndarray:
        return self.exact(points)


def sector_problem(omega: float, smooth: bool = False, n_arc: int = 4096) -> SectorProblem:
    return SectorProblem(omega=omega, smooth_part=smooth, n_arc=n_arc)


def sector_polygon(omega: float, n_arc: int = 4096) -> PolygonDomain:
    """Polygonized unit circle sector with the corner at the origin.

    The radial grading fixes both the unit radius and all angles, so this
    polygon serves directly as the reference domain for any exponent.
    """
    if not (math.pi < omega < 2.0 * math.pi):
        raise ProblemError("opening angle must lie in (pi, 2*pi)")
    if n_arc < 64:
        raise ProblemError("arc polygonization needs at least 64 segments")
    ang = np.linspace(0.0, omega, n_arc + 1)
    verts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    return PolygonDomain(verts, corner_index=0)


def weighted_norm_layers(omega: float, k: int, alphas, n_layers: int = 60,
                         ratio: float = 0.5, n_r: int = 8, n_theta: int = 24
                         ) -> tuple[float, np.ndarray]:
    """Weighted Sobolev norm (squared) of the corner solution on the unit
    sector by geometrically graded radial layers.

    Returns the total and the per-layer contributions of the leading
    (j = k) term, whose growth as layers approach the corner is the
    divergence diagnostic.
    """
    alphas = np.asarray(alphas, dtype=float)
    if len(alphas) != k:
        raise ProblemError("need one radial power per derivative order 1..k")
    from .geometry import gauss_legendre
    xr, wr = gauss_legendre(n_r)
    xt, wt = gauss_legendre(n_theta)
    theta = omega * xt
    wtheta = omega * wt
    total = 0.0
    leading = np.zeros(n_layers)
    for layer in range(n_layers):
        r1 = ratio ** layer
        r0 = ratio ** (layer + 1)
        r = r0 + (r1 - r0) * xr
        wrad = (r1 - r0) * wr
        R, T = np.meshgrid(r, theta, indexing="ij")
        W = np.outer(wrad * r, wtheta)
        for j in range(1, k + 1):
            contrib = float(np.sum(W * R ** (2.0 * alphas[j - 1])
                                   * total_derivative_sq(omega, j, R, T)))
            total += contrib
            if j == k:
                leading[layer] = contrib
    return total, leading


def weighted_norm(omega: float, k: int, alphas, n_layers: int = 60,
                  growth_tol: float = 1e-2) -> dict:
    """Weighted norm with a divergence classification.

    The quadrature depth is doubled; if the value keeps growing by more
    than ``growth_tol`` relative, the norm is reported divergent.
    """
    val1, _ = weighted_norm_layers(omega, k, alphas, n_layers=n_layers)
    val2, _ = weighted_norm_layers(omega, k, alphas, n_layers=2 * n_layers)
    growth = (val2 - val1) / val1 if val1 > 0 else math.inf
    divergent = not math.isfinite(val2) or growth > growth_tol
    return {"value": math.sqrt(val2) if not divergent else math.inf,
            "squared": val2, "divergent": divergent, "growth": growth}
