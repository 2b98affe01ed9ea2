import numpy as np
import pytest

from acvar import fields as vf
from acvar.geometry import Hypersurface


# Angular integrands in these tests are low-degree trigonometric polynomials,
# so small node counts integrate them to roundoff.

@pytest.fixture
def circle():
    return Hypersurface.circle(0.5, nodes=64)


@pytest.fixture
def unit_circle():
    return Hypersurface.circle(1.0, nodes=64)


@pytest.fixture
def sphere():
    return Hypersurface.sphere(0.5, nodes_theta=16, nodes_phi=32)


@pytest.fixture
def ellipse():
    return Hypersurface.ellipse(2.0, 1.0, nodes=512)


@pytest.fixture
def torus():
    return Hypersurface.torus(1.0, 0.3, nodes_theta=64, nodes_phi=48)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_rotation_2d():
    return vf.rotation((0.0, 0.0))
