import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pndynamics.potential import Potential, builtin_sine, from_fourier, scale, validate


def test_sine_values(sine):
    assert float(sine(0.0)) == 0.0
    assert float(sine(0.5)) == pytest.approx(1.0, abs=1e-15)
    assert sine.alpha == pytest.approx(2 * np.pi**2, rel=1e-14)
    assert sine.alpha == pytest.approx(19.7392, abs=1e-4)


def test_sine_derivatives_match_finite_differences(sine):
    v = np.linspace(-1.3, 2.1, 37)
    h = 1e-6
    fd1 = (sine(v + h) - sine(v - h)) / (2 * h)
    fd2 = (sine.deriv1(v + h) - sine.deriv1(v - h)) / (2 * h)
    assert np.max(np.abs(fd1 - sine.deriv1(v))) < 1e-7
    assert np.max(np.abs(fd2 - sine.deriv2(v))) < 1e-6


def test_integer_wells(sine):
    k = np.arange(-5, 6, dtype=float)
    assert np.max(np.abs(sine(k))) <= 1e-12
    assert np.max(np.abs(sine.deriv1(k))) <= 1e-12


def test_scale_identity_and_alpha(sine):
    assert scale(sine, 1.0) is sine
    s = scale(sine, 1 / (2 * np.pi**2))
    assert s.alpha == pytest.approx(1.0, rel=1e-14)
    v = np.linspace(0, 1, 101)
    assert float(s(0.0)) == 0.0
    assert np.max(np.abs(s(v + 1) - s(v))) < 1e-15


@pytest.mark.parametrize("factor", [0.0, -1.0, float("nan")])
def test_scale_rejects_nonpositive(sine, factor):
    with pytest.raises(ValueError):
        scale(sine, factor)


def test_validate_sine_passes(sine):
    rep = validate(sine, 1024)
    assert rep.passed
    assert rep.failures() == []


def test_validate_parabola_fails_periodicity():
    p = Potential(lambda v: v**2, lambda v: 2 * v, lambda v: 2 + 0 * v)
    rep = validate(p)
    assert not rep["periodicity"].passed
    assert not rep.passed


def test_validate_negative_fails_positivity():
    p = Potential(lambda v: -np.sin(np.pi * v) ** 2, lambda v: -np.pi * np.sin(2 * np.pi * v),
                  lambda v: -2 * np.pi**2 * np.cos(2 * np.pi * v))
    rep = validate(p)
    assert not rep["positive_on_unit_interval"].passed


def test_validate_catches_shallow_interior_zero():
    # W = sin(2 pi v)**2 / 4 vanishes at v = 1/2 as well
    p = from_fourier(0.125, (-0.0, -0.125))
    assert not validate(p)["positive_on_unit_interval"].passed


def test_validate_rejects_tiny_sample_count(sine):
    with pytest.raises(ValueError):
        validate(sine, 4)


def test_from_fourier_reproduces_sine():
    # sin(pi v)**2 = 1/2 - cos(2 pi v)/2
    p = from_fourier(0.5, (-0.5,))
    v = np.linspace(-1, 2, 301)
    s = builtin_sine()
    assert np.max(np.abs(p(v) - s(v))) < 1e-14
    assert np.max(np.abs(p.deriv1(v) - s.deriv1(v))) < 1e-12
    assert np.max(np.abs(p.deriv2(v) - s.deriv2(v))) < 1e-11
    assert validate(p).passed


def test_asymmetric_potential_is_valid(asym_raw):
    assert validate(asym_raw).passed
    v = np.linspace(0.05, 0.45, 9)
    # no reflection symmetry W(1 - v) = W(v)
    assert np.max(np.abs(asym_raw(1 - v) - asym_raw(v))) > 1e-2


coeff = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(cos=st.lists(coeff, min_size=1, max_size=3), sin=st.lists(coeff, max_size=3),
       pin=st.booleans(), factor=st.floats(1e-3, 1e3))
def test_validation_invariant_under_scaling(cos, sin, pin, factor):
    # pin=True enforces W(0) = 0 so that both outcomes occur
    a0 = -sum(cos) if pin else 0.3
    p = from_fourier(a0, cos, sin)
    assert validate(p).passed == validate(scale(p, factor)).passed


@settings(max_examples=40, deadline=None)
@given(cos=st.lists(coeff, min_size=1, max_size=3), sin=st.lists(coeff, max_size=3))
def test_accepted_potentials_have_integer_wells(cos, sin):
    p = from_fourier(-sum(cos), cos, sin)
    if validate(p).passed:
        k = np.arange(-3, 4, dtype=float)
        assert np.max(np.abs(p(k))) <= 1e-10
        assert np.max(np.abs(p.deriv1(k))) <= 1e-10
