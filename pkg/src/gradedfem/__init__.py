"""Graded parametric cut finite elements for corner-singular Poisson problems."""

from .analysis import (ErrorReport, RateTable, compute_errors, convergence_study,
                       fit_rates, mesh_shift_study)
from .assembly import (AssembledSystem, NitscheParams, assemble_ghost_penalty,
                       assemble_load, assemble_nitsche_boundary, assemble_system,
                       assemble_volume, ghost_energy)
from .estimator import CutPoissonSolver
from .geometry import (ActiveMesh, BoundaryQuadrature, PolygonDomain,
                       QuadratureCell, ReferenceMesh, boundary_quadrature,
                       build_reference_mesh, classify_elements, clip_element,
                       corner_centered_shift)
from .mapping import (GradedMap, PostMap, alpha_powers, b_matrix, default_gamma,
                      load_weight, mesh_function, min_gamma, rigid_map)
from .multipatch import (Interface, MultipatchSystem, Patch, PatchSet,
                         assemble_multipatch, interface_jump_norm, make_patch,
                         multipatch_errors, solve_multipatch, three_patch_udomain,
                         two_patch_square)
from .problems import (CornerFrame, SectorProblem, sector_polygon, sector_problem,
                       singular_solution, weighted_norm)
from .solve import SolveReport, solve
from .splines import (BasisEval, DofMap, SplineSpace, build_space, detect_slit,
                      eval_basis, greville_interpolant, split_disjoint_supports)

__version__ = "0.1.0"

__all__ = [
    "ActiveMesh", "AssembledSystem", "BasisEval", "BoundaryQuadrature",
    "CornerFrame", "CutPoissonSolver", "DofMap", "ErrorReport", "GradedMap",
    "Interface", "MultipatchSystem", "NitscheParams", "Patch", "PatchSet",
    "PolygonDomain", "PostMap", "QuadratureCell", "RateTable", "ReferenceMesh",
    "SectorProblem", "SolveReport", "SplineSpace", "alpha_powers",
    "assemble_ghost_penalty", "assemble_load", "assemble_multipatch",
    "assemble_nitsche_boundary", "assemble_system", "assemble_volume",
    "b_matrix", "boundary_quadrature", "build_reference_mesh", "build_space",
    "classify_elements", "clip_element", "compute_errors", "convergence_study",
    "corner_centered_shift", "default_gamma", "detect_slit", "eval_basis",
    "fit_rates", "ghost_energy", "greville_interpolant", "interface_jump_norm",
    "load_weight", "make_patch", "mesh_function", "mesh_shift_study",
    "min_gamma", "multipatch_errors", "rigid_map", "sector_polygon",
    "sector_problem", "singular_solution", "solve", "solve_multipatch",
    "split_disjoint_supports", "three_patch_udomain", "two_patch_square",
    "weighted_norm",
]
