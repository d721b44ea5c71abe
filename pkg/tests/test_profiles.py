import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pndynamics.analysis import tail_law_check
from pndynamics.potential import Potential, scale
from pndynamics.profiles import (GridSpec, corrector_operator, export_profile, import_profile,
                                 interaction_mobility, layer_operator, mobility, oriented_corrector,
                                 oriented_corrector_derivative, oriented_layer,
                                 oriented_layer_derivative, rescale_to_unit_mobility, solve_corrector,
                                 solve_layer)


def sine_oracle(x):
    return 0.5 + np.arctan(2 * np.pi**2 * x) / np.pi


# -- layer ------------------------------------------------------------------


def test_layer_centre_and_u1(sine_layer):
    assert float(sine_layer(0.0)) == pytest.approx(0.5, abs=1e-12)
    assert float(sine_layer(1.0)) == pytest.approx(0.98388, abs=1e-5)


def test_layer_matches_analytic_oracle(sine_layer):
    x = np.linspace(-20, 20, 4001)
    assert np.max(np.abs(sine_layer(x) - sine_oracle(x))) <= 1e-4
    nodes = sine_layer.grid[np.abs(sine_layer.grid) <= 20]
    assert np.max(np.abs(sine_layer.u_values[np.abs(sine_layer.grid) <= 20] - sine_oracle(nodes))) <= 1e-4


def test_layer_antisymmetry(sine_layer):
    g = sine_layer.grid
    assert np.max(np.abs(sine_layer(-g) - (1 - sine_layer(g)))) <= 1e-6


def test_layer_residual_and_monotonicity(sine_layer, asym):
    assert sine_layer.residual <= 1e-8
    assert asym[1].residual <= 1e-8
    assert np.all(np.diff(sine_layer.u_values) > 0)
    assert np.all(np.diff(asym[1].u_values) > 0)


def test_layer_equation_off_grid(sine, sine_layer):
    # I[u] = W'(u) at points between nodes
    y = np.linspace(-7.3, 7.1, 57)
    op = layer_operator(sine_layer, sine)
    assert np.max(np.abs(op(y) - sine.deriv1(sine_layer(y)))) <= 1e-6


def test_layer_derivative_positive_and_consistent(sine_layer):
    x = np.linspace(-3, 3, 61)
    d = sine_layer.derivative(x)
    h = 1e-5
    fd = (sine_layer(x + h) - sine_layer(x - h)) / (2 * h)
    assert np.all(d > 0)
    assert np.max(np.abs(d - fd)) <= 1e-5


def test_mobility_sine(sine_layer):
    assert sine_layer.c0 == pytest.approx(1 / np.pi, rel=1e-3)
    assert sine_layer.c0 == pytest.approx(0.31831, abs=1e-5)
    assert mobility(sine_layer) == pytest.approx(sine_layer.c0, rel=1e-14)


def test_mobility_unit_alpha(sine):
    layer = solve_layer(scale(sine, 1 / (2 * np.pi**2)))
    assert layer.alpha == pytest.approx(1.0)
    assert layer.c0 == pytest.approx(2 * np.pi, rel=1e-3)


def test_tail_coefficient_sine(sine_layer):
    assert sine_layer.tail_coefficient == pytest.approx(1 / (2 * np.pi**3), rel=0.05)


def test_mobility_refinement(sine, sine_layer):
    fine = solve_layer(sine, GridSpec().refined())
    assert abs(fine.c0 - sine_layer.c0) <= 1e-4 * sine_layer.c0


def test_rescale_sine(sine, sine_layer, unit_layer):
    pot, eps_hat = rescale_to_unit_mobility(sine, 0.1, layer=sine_layer)
    assert eps_hat == pytest.approx(0.1 / np.sqrt(np.pi), rel=1e-3)
    assert unit_layer.c0 == pytest.approx(1.0, abs=1e-3)


def test_rescale_fixed_point_and_idempotence(unit_sine, unit_layer, sine, sine_layer):
    pot, eps_hat = rescale_to_unit_mobility(unit_sine, 0.2, layer=unit_layer)
    assert eps_hat == pytest.approx(0.2, rel=1e-3)
    assert pot.alpha == pytest.approx(unit_sine.alpha, rel=1e-3)
    p1, e1 = rescale_to_unit_mobility(sine, 0.1, layer=sine_layer)
    p2, e2 = rescale_to_unit_mobility(p1, e1, layer=unit_layer)
    assert e2 == pytest.approx(e1, rel=1e-3)
    assert p2.alpha == pytest.approx(p1.alpha, rel=1e-3)


def test_unit_interaction(pde_sine, sine):
    pot, layer = pde_sine
    assert interaction_mobility(layer) == pytest.approx(1.0, abs=1e-6)
    # for sin(pi v)**2 the factor is 1/pi**2
    assert pot.alpha == pytest.approx(sine.alpha / np.pi**2, rel=1e-6)


def test_solve_layer_rejects_invalid_potential():
    p = Potential(lambda v: v**2, lambda v: 2 * v, lambda v: 2 + 0 * v)
    with pytest.raises(ValueError):
        solve_layer(p)


# -- corrector --------------------------------------------------------------


def test_corrector_sine_vanishes(unit_sine, unit_layer):
    corr = solve_corrector(unit_layer, unit_sine)
    assert corr.residual <= 1e-6
    assert corr.sup_norm <= 1e-6
    assert corr.drag == pytest.approx(1.0, abs=1e-6)


def test_corrector_asymmetric(asym):
    pot, layer, corr = asym
    assert corr.residual <= 1e-6
    assert corr.drag == pytest.approx(1.0, abs=1e-6)
    assert corr.sup_norm > 1e-3
    # gauge: orthogonal to u'
    w = np.gradient(layer.grid)
    assert abs(np.sum(corr.psi_values * layer.u_prime_values * w)) <= 1e-3 * corr.sup_norm


def test_corrector_equation_off_grid(asym):
    pot, layer, corr = asym
    y = np.linspace(-6.1, 6.3, 41)
    op = corrector_operator(corr, layer, pot)
    w2 = pot.deriv2(layer(y))
    resid = op(y) - w2 * corr(y) - (w2 - pot.alpha) / pot.alpha - layer.derivative(y)
    assert np.max(np.abs(resid)) <= 1e-5


def test_corrector_tail_law(asym):
    pot, layer, corr = asym
    x = layer.grid[(np.abs(layer.grid) >= 1) & (np.abs(layer.grid) <= 0.5 * layer.grid[-1])]
    assert np.all(np.abs(corr(x) - corr.k2 / x) <= corr.k3 / x**2 + 1e-12)
    assert np.isfinite(corr.k3)


def test_corrector_extremes_decrease_with_extent(asym):
    pot = asym[0]
    rep = tail_law_check(pot, GridSpec())
    assert rep["X"]["psi_end"] <= 0.05
    assert rep["2X"]["psi_end"] <= rep["X"]["psi_end"]
    assert rep["K3_stable"] and rep["K1_stable"]


def test_corrector_rejects_poor_layer(unit_sine, unit_layer):
    from dataclasses import replace
    with pytest.raises(ValueError):
        solve_corrector(replace(unit_layer, residual=1.0), unit_sine)


# -- oriented profiles ------------------------------------------------------


def test_oriented_layer_values(sine_layer):
    assert float(oriented_layer(0.0, 1, sine_layer)) == pytest.approx(0.5, abs=1e-12)
    assert float(oriented_layer(0.0, -1, sine_layer)) == pytest.approx(-0.5, abs=1e-12)


def test_oriented_corrector_values(asym):
    corr = asym[2]
    x = np.linspace(-4, 4, 17)
    assert np.array_equal(oriented_corrector(x, 1, corr), corr(x))
    assert np.allclose(oriented_corrector(x, -1, corr), -corr(-x), atol=0)
    assert float(oriented_corrector(0.0, -1, corr)) == -float(corr(0.0))


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-300, 300, allow_nan=False))
def test_oriented_identities(sine_layer, asym, x):
    lay, corr = asym[1], asym[2]
    assert float(oriented_layer(x, -1, sine_layer)) + 1 == pytest.approx(float(oriented_layer(-x, 1, sine_layer)),
                                                                         abs=1e-12)
    assert float(oriented_layer(x, -1, lay)) + 1 == pytest.approx(float(lay(-x)), abs=1e-12)
    assert float(oriented_layer_derivative(x, -1, lay)) == pytest.approx(-float(lay.derivative(-x)), abs=1e-12)
    h = 1e-6
    if abs(x) < 100:
        fd = (float(oriented_corrector(x + h, -1, corr)) - float(oriented_corrector(x - h, -1, corr))) / (2 * h)
        assert float(oriented_corrector_derivative(x, -1, corr)) == pytest.approx(fd, abs=1e-5)


# -- export -----------------------------------------------------------------


def test_export_round_trip(tmp_path, asym):
    pot, layer, corr = asym
    csv_path, json_path = export_profile(tmp_path / "asym", layer, corr, pot)
    lay2, corr2, header = import_profile(tmp_path / "asym")
    assert np.array_equal(lay2.grid, layer.grid)
    assert np.array_equal(lay2.u_values, layer.u_values)
    assert np.array_equal(corr2.psi_values, corr.psi_values)
    assert lay2.c0 == layer.c0 and corr2.k2 == corr.k2
    assert lay2.tail == layer.tail
    x = np.linspace(-250, 250, 101)
    assert np.array_equal(lay2(x), layer(x))
    with open(csv_path, "rb") as fh:
        assert b"\r" not in fh.read()


def test_export_without_corrector(tmp_path, sine_layer, sine):
    export_profile(tmp_path / "s", sine_layer, None, sine)
    lay, corr, header = import_profile(tmp_path / "s")
    assert corr is None
    assert float(header["c0"]) == pytest.approx(0.31831, abs=1e-5)
