import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pndynamics.halflaplacian import (FarFieldModel, PVQuadrature, SampledFunction, apply_quadrature,
                                      apply_spectral, cross_validate, graded_grid, spectral_symbol)

from conftest import arctan_oracle

TWO_PI = 2 * np.pi
ARCTAN_TAIL = FarFieldModel(-np.pi / 2, np.pi / 2, -1.0, -1.0)


def periodic_grid(n):
    return np.arange(n) * (TWO_PI / n)


def arctan_grid():
    return graded_grid(0.02, 2.0, 1.05, 200.0)


# -- spectral route ---------------------------------------------------------


def test_spectral_cos():
    x = periodic_grid(256)
    assert np.max(np.abs(apply_spectral(np.cos(x), TWO_PI) + np.cos(x))) <= 1e-10


def test_spectral_cos2():
    x = periodic_grid(256)
    assert np.max(np.abs(apply_spectral(np.cos(2 * x), TWO_PI) + 2 * np.cos(2 * x))) <= 1e-10


def test_spectral_constant():
    assert np.max(np.abs(apply_spectral(np.full(64, -7.0), TWO_PI))) <= 1e-13


def test_spectral_batched_axis():
    x = periodic_grid(128)
    vals = np.stack([np.cos(x), np.sin(3 * x)], axis=1)
    out = apply_spectral(vals, TWO_PI)
    assert np.allclose(out[:, 0], -np.cos(x), atol=1e-12)
    assert np.allclose(out[:, 1], -3 * np.sin(3 * x), atol=1e-12)


def test_spectral_symbol():
    s = spectral_symbol(8, TWO_PI)
    assert np.allclose(s, [0, 1, 2, 3, 4])


def test_spectral_rejects_nonuniform_nodes():
    x = np.sort(np.random.default_rng(0).uniform(0, TWO_PI, 32))
    with pytest.raises(ValueError):
        apply_spectral(np.cos(x), TWO_PI, nodes=x)


# -- quadrature route -------------------------------------------------------


def test_quadrature_arctan_oracle():
    g = arctan_grid()
    q = np.linspace(-10, 10, 401)
    v = apply_quadrature(SampledFunction(g, np.arctan(g), ARCTAN_TAIL), q)
    assert np.max(np.abs(v - arctan_oracle(q))) <= 1e-5


def test_quadrature_arctan_at_one_and_zero():
    g = arctan_grid()
    v = apply_quadrature(SampledFunction(g, np.arctan(g), ARCTAN_TAIL), [0.0, 1.0])
    assert abs(v[0]) <= 1e-12
    assert v[1] == pytest.approx(-0.5, abs=1e-6)


def test_quadrature_constant():
    g = arctan_grid()
    v = apply_quadrature(SampledFunction(g, np.full(g.size, 3.0), FarFieldModel(3.0, 3.0)), g[5:-5])
    # exact cancellation up to round-off in the kernel sums
    assert np.max(np.abs(v)) <= 1e-10


def test_quadrature_periodic_cos():
    x = periodic_grid(256)
    v = PVQuadrature(x, x, period=TWO_PI).linear(np.cos(x))
    assert np.max(np.abs(v + np.cos(x))) <= 1e-8


def test_quadrature_scaling_on_arctan():
    # phi_a(x) = arctan(a x) gives a * I[arctan](a x)
    a = 2.0
    g = arctan_grid()
    tail = FarFieldModel(-np.pi / 2, np.pi / 2, -1 / a, -1 / a)
    q = np.linspace(-5, 5, 101)
    v = apply_quadrature(SampledFunction(g, np.arctan(a * g), tail), q)
    assert np.max(np.abs(v - a * arctan_oracle(a * q))) <= 1e-6


def test_quadrature_query_next_to_node():
    # queries within rounding distance of a node must not lose accuracy
    g = np.concatenate([np.linspace(-200, -2, 400)[:-1], np.linspace(-2, 2, 401), np.linspace(2, 200, 400)[1:]])
    f = SampledFunction(g, np.arctan(g), ARCTAN_TAIL)
    q = np.array([0.03, 0.25, -0.7]) + np.array([1e-11, -3e-12, 2e-10])
    v = apply_quadrature(f, q)
    assert np.max(np.abs(v - arctan_oracle(q))) <= 1e-5
    on = apply_quadrature(f, np.round(q, 2))
    assert np.max(np.abs(v - on)) <= 1e-8


def test_quadrature_matrix_matches_linear():
    g = graded_grid(0.1, 1.0, 1.2, 30.0)
    q = PVQuadrature(g, g[4:-4])
    f = np.exp(-g**2)
    assert np.allclose(q.matrix() @ f, q.linear(f), atol=1e-13)


def test_quadrature_rejects_query_near_edge():
    g = graded_grid(0.1, 1.0, 1.2, 30.0)
    with pytest.raises(ValueError):
        PVQuadrature(g, [g[-1]])


def test_sampled_function_validation():
    with pytest.raises(ValueError):
        SampledFunction([0.0, 1.0, 0.5, 2.0], [0, 0, 0, 0])
    with pytest.raises(ValueError):
        SampledFunction([0.0, 1.0, 2.0, 3.0], [0, np.nan, 0, 0])


def test_graded_grid_shape():
    g = graded_grid(0.02, 2.0, 1.05, 200.0)
    assert g[0] == -200.0 and g[-1] == 200.0
    assert 0.0 in g
    assert np.allclose(g, -g[::-1])
    assert np.all(np.diff(g) > 0)


def test_farfield_model_left_side_convention():
    ff = FarFieldModel(1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    assert ff(np.array([-2.0]))[0] == pytest.approx(1.0 + 3.0 / -2.0 + 5.0 / 4.0)
    assert ff(np.array([2.0]))[0] == pytest.approx(2.0 + 4.0 / 2.0 + 6.0 / 4.0)


# -- cross validation -------------------------------------------------------


def test_cross_validate_cos():
    cv = cross_validate(np.cos, 1e-8, n=512)
    assert cv.passed, cv.discrepancy


def test_cross_validate_constant():
    cv = cross_validate(lambda x: np.full(x.shape, 2.0), 1e-10)
    assert cv.passed, cv.discrepancy


def test_cross_validate_arctan_tails():
    g = arctan_grid()
    cv = cross_validate(np.arctan, 1e-5, kind="tails", grid=g, farfield=ARCTAN_TAIL,
                        reference=arctan_oracle, query=np.linspace(-10, 10, 101))
    assert cv.passed, cv.discrepancy


def test_cross_validate_reports_failure():
    cv = cross_validate(np.cos, 0.0, n=16)
    assert not cv.passed


# -- properties -------------------------------------------------------------

modes = st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=6)


def trig(coeffs, phase, x):
    return sum(c * np.cos((k + 1) * x + phase * (k + 1)) for k, c in enumerate(coeffs))


@settings(max_examples=30, deadline=None)
@given(a=modes, b=modes, alpha=st.floats(-3, 3), beta=st.floats(-3, 3), ph=st.floats(0, 6))
def test_linearity(a, b, alpha, beta, ph):
    x = periodic_grid(128)
    f, g = trig(a, ph, x), trig(b, 0.0, x)
    lhs = apply_spectral(alpha * f + beta * g, TWO_PI)
    rhs = alpha * apply_spectral(f, TWO_PI) + beta * apply_spectral(g, TWO_PI)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12
    q = PVQuadrature(x, x, period=TWO_PI)
    lq = q.linear(alpha * f + beta * g)
    rq = alpha * q.linear(f) + beta * q.linear(g)
    assert np.max(np.abs(lq - rq)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(a=modes, ph=st.floats(0, 6), shift=st.integers(1, 127))
def test_translation_equivariance(a, ph, shift):
    x = periodic_grid(128)
    f = trig(a, ph, x)
    lhs = apply_spectral(np.roll(f, shift), TWO_PI)
    assert np.max(np.abs(lhs - np.roll(apply_spectral(f, TWO_PI), shift))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(a=st.lists(st.floats(0, 1), min_size=1, max_size=6), c=st.floats(0, 1), j=st.integers(0, 127))
def test_nonpositive_at_strict_maximum(a, c, j):
    # -sum a_k (1 - cos k(x - x_j)) - c sin(x - x_j)**4 peaks at node j
    x = periodic_grid(128)
    z = x - x[j]
    f = -sum(ak * (1 - np.cos((k + 1) * z)) for k, ak in enumerate(a)) - c * np.sin(z) ** 4
    assert apply_spectral(f, TWO_PI)[j] <= 1e-12
    q = PVQuadrature(x, x[j:j + 1], period=TWO_PI)
    assert q.linear(f)[0] <= 1e-8
