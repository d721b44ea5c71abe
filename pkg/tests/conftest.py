"""Shared fixtures: layers are solved once per session."""
from __future__ import annotations

import numpy as np
import pytest

from pndynamics.potential import builtin_sine, from_fourier, scale
from pndynamics.profiles import GridSpec, rescale_to_unit_interaction, solve_corrector, solve_layer

# a potential without the reflection symmetry of sin(pi v)**2, so that its
# corrector is nonzero
ASYM_COEFFS = (0.65, (-0.5, -0.15), (0.1, -0.05))


@pytest.fixture(scope="session")
def sine():
    return builtin_sine()


@pytest.fixture(scope="session")
def sine_layer(sine):
    return solve_layer(sine, GridSpec())


@pytest.fixture(scope="session")
def unit_sine(sine, sine_layer):
    """``sin(pi v)**2`` scaled to mobility 1."""
    return scale(sine, sine_layer.c0)


@pytest.fixture(scope="session")
def unit_layer(unit_sine):
    return solve_layer(unit_sine, GridSpec())


@pytest.fixture(scope="session")
def asym_raw():
    return from_fourier(*ASYM_COEFFS, name="asym")


@pytest.fixture(scope="session")
def asym(asym_raw):
    """Asymmetric potential scaled to mobility 1, with its layer and corrector."""
    raw_layer = solve_layer(asym_raw, GridSpec())
    pot = scale(asym_raw, raw_layer.c0)
    layer = solve_layer(pot, GridSpec())
    return pot, layer, solve_corrector(layer, pot)


@pytest.fixture(scope="session")
def pde_sine(sine):
    """``sin(pi v)**2`` scaled so that the particle limit has mobility 1."""
    return rescale_to_unit_interaction(sine, GridSpec())


def arctan_oracle(x):
    """``I[arctan](x) = -x/(1 + x**2)`` from the harmonic extension."""
    x = np.asarray(x, dtype=float)
    return -x / (1.0 + x**2)
