"""Shared fixtures: small grids and problems that keep unit tests fast."""

import numpy as np
import pytest

from fracmag.lattice import ComplexField, Grid, MagneticPotential, ProblemSpec


def random_complex(grid: Grid, rng: np.random.Generator, box: float = 0.5) -> ComplexField:
    """Complex Gaussian values on |x|_inf < box*L, zero elsewhere."""
    inside = np.all(np.abs(grid.coords) < box * grid.L, axis=1)
    vals = rng.normal(size=grid.M) + 1j * rng.normal(size=grid.M)
    return ComplexField(grid, np.where(inside, vals, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


@pytest.fixture
def grid1():
    return Grid(1, 4, 1.0)


@pytest.fixture
def spec2():
    g = Grid(2, 8, 2.0)
    return ProblemSpec(g, 0.5, 2.0, q=3.0, lam=1.0, A=MagneticPotential.symmetric_gauge(0.7))
