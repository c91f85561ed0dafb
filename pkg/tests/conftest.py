import math

import numpy as np
import pytest

import gradedfem as gf


@pytest.fixture(scope="session")
def sector_domain_150():
    """Unit sector, opening 1.5*pi, polygonized at 4096 segments."""
    return gf.sector_problem(1.5 * math.pi).domain()


@pytest.fixture(scope="session")
def sector_amesh_150(sector_domain_150):
    mesh = gf.build_reference_mesh(0.2)
    return gf.classify_elements(mesh, sector_domain_150)


def sector_amesh(h, omega=1.5 * math.pi, shift=(0.0, 0.0), n_arc=4096):
    dom = gf.sector_problem(omega, n_arc=n_arc).domain()
    return gf.classify_elements(gf.build_reference_mesh(h, shift), dom)


def full_square_amesh(h=0.5):
    dom = gf.PolygonDomain([(-1, -1), (1, -1), (1, 1), (-1, 1)])
    return gf.classify_elements(gf.build_reference_mesh(h), dom)
