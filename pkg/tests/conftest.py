import numpy as np
import pytest

from checkerfem import mesh as meshmod
from checkerfem.model import ModelParams
from checkerfem.spaces import build_space


@pytest.fixture
def params():
    return ModelParams()


@pytest.fixture
def laplace_params():
    return ModelParams(laplace_only=True)


@pytest.fixture
def square4():
    return meshmod.initial_mesh()


@pytest.fixture
def hanging_mesh():
    """Two refinements of the NE region: hanging vertices on both axes."""
    mesh = meshmod.refine(meshmod.initial_mesh(), {1})
    return meshmod.refine(mesh, {mesh.cells[1].children[0]})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def conforming_field(space, rng, scale=1.0):
    from checkerfem.spaces import DiscreteField

    return DiscreteField(space, space.distribute(scale * rng.standard_normal(space.n_dofs)))


def interpolant(space, fn):
    """Nodal interpolant of a callable; conforming for smooth functions."""
    from checkerfem.spaces import DiscreteField

    coords = space.dof_coords
    vals = np.array([fn(x, y) for x, y in coords])
    return DiscreteField(space, vals)
