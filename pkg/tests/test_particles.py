import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pndynamics.particles import (EvolveControls, IntegrationError, ParticleState, annihilate, evolve,
                                  export_csv, export_events, find_clusters, rhs, step_function,
                                  upper_envelope, velocity_derivative)


def pair(b=(1, -1), x=(-0.5, 0.5), **kw):
    return ParticleState.create(x, b, **kw)


# -- right-hand side --------------------------------------------------------


def test_rhs_opposite_pair():
    assert np.allclose(rhs(pair()), [1.0, -1.0], atol=0)


def test_rhs_single_particle():
    assert rhs(ParticleState.create([0.2], [1], external_force=0.3))[0] == pytest.approx(-0.3)
    assert rhs(ParticleState.create([0.2], [-1], external_force=0.3))[0] == pytest.approx(0.3)
    assert rhs(ParticleState.create([0.2], [1]))[0] == 0.0


def test_rhs_same_sign_repulsion():
    assert np.allclose(rhs(pair((1, 1), (0.0, 1.0))), [-1.0, 1.0], atol=0)


def test_rhs_mobility_scales():
    assert np.allclose(rhs(pair(mobility=2.5)), [2.5, -2.5])


def test_velocity_derivative_pair():
    # d/dt of 1/(x1 - x2) along the flow: for the symmetric pair it is -2/D**3 * (v1 - v2)
    st_ = pair()
    dv = velocity_derivative(st_)
    assert dv[0] == pytest.approx(2.0, rel=1e-5)
    assert dv[1] == pytest.approx(-2.0, rel=1e-5)


@pytest.mark.parametrize("kw", [dict(positions=[0.5, -0.5], orientations=[1, -1]),
                                dict(positions=[0.0], orientations=[2]),
                                dict(positions=[], orientations=[]),
                                dict(positions=[0.0, 1.0], orientations=[1]),
                                dict(positions=[0.0, np.inf], orientations=[1, 1]),
                                dict(positions=[0.0], orientations=[1], mobility=0.0)])
def test_create_validation(kw):
    with pytest.raises(ValueError):
        ParticleState.create(**kw)


# -- evolution --------------------------------------------------------------


def test_two_body_collision():
    rec = evolve(pair(), 1.0)
    assert len(rec.events) == 1
    e = rec.events[0]
    assert e.time == pytest.approx(0.25, rel=1e-4)
    assert e.removed == (0, 1) and e.survivor is None
    assert e.location == pytest.approx(0.0, abs=1e-12)
    assert rec.final_state.survivors == ()
    assert np.all(step_function(rec, 0.6, np.linspace(-2, 2, 9)) == 0)


def test_two_body_trajectory_matches_oracle():
    # D(t)**2 = 1 - 4t
    rec = evolve(pair(), 0.2)
    for t in np.linspace(0, 0.2, 11):
        x = rec.positions_at(t)
        assert x[1] - x[0] == pytest.approx(np.sqrt(1 - 4 * t), abs=1e-8)


def test_three_body_collision():
    rec = evolve(ParticleState.create([-0.5, 0.0, 0.5], [1, -1, 1]), 1.0)
    assert len(rec.events) == 1
    e = rec.events[0]
    assert e.time == pytest.approx(0.25, rel=1e-3)
    assert e.location == pytest.approx(0.0, abs=1e-9)
    assert e.survivor == 0 and e.survivor_orientation == 1
    assert rec.final_state.survivors == (0,)
    assert rec.final_state.positions[0] == pytest.approx(0.0, abs=1e-9)


def test_repulsive_pair():
    rec = evolve(pair((1, 1), (0.0, 1.0)), 10.0)
    assert rec.events == ()
    gaps = rec.positions[:, 1] - rec.positions[:, 0]
    assert np.all(np.diff(gaps) > 0)
    assert np.max(np.abs(rec.positions.sum(axis=1) - 1.0)) <= 1e-8
    # D**2 = 1 + 4t
    assert gaps[-1] == pytest.approx(np.sqrt(41.0), rel=1e-7)


def test_all_positive_never_annihilate():
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(0, 1, 6))
    rec = evolve(ParticleState.create(x, [1] * 6), 2.0)
    assert rec.events == ()


def test_sample_times_are_hit():
    rec = evolve(pair(), 0.5, EvolveControls(sample_times=(0.1, 0.2, 0.3)))
    for t in (0.1, 0.2, 0.3):
        assert np.any(rec.times == t)


def test_external_force_drives_single_particle():
    rec = evolve(ParticleState.create([0.0], [1], external_force=0.5), 2.0)
    assert rec.positions_at(2.0)[0] == pytest.approx(-1.0, abs=1e-10)


def test_perturbation_stability_example():
    base = evolve(pair(), 1.0)
    b = np.array([1, -1])
    pert = evolve(ParticleState.create(np.array([-0.5, 0.5]) - 1e-3 * b, b, external_force=1e-3), 1.0)
    assert abs(pert.events[0].time - 0.25) <= 0.02
    assert abs(pert.events[0].location - base.events[0].location) <= 0.05


def test_evolve_rejects_bad_end_time():
    with pytest.raises(ValueError):
        evolve(pair(), 0.0)


def test_controls_validation():
    with pytest.raises(ValueError):
        EvolveControls(collision_threshold=1e-4, cluster_radius=1e-5)


# -- annihilation -----------------------------------------------------------


def test_annihilate_pair():
    st_ = ParticleState.create([0.0, 1e-7], [1, -1])
    new, ev = annihilate(st_, [[0, 1]])
    assert ev[0].removed == (0, 1) and ev[0].survivor is None
    assert new.survivors == ()


def test_annihilate_triple_survivor():
    st_ = ParticleState.create([0.0, 1e-7, 2e-7], [1, -1, 1])
    new, ev = annihilate(st_, [[0, 1, 2]])
    assert ev[0].survivor_orientation == 1 and ev[0].survivor == 0
    assert new.survivor_positions()[0] == pytest.approx(1e-7)
    assert new.total_orientation == st_.total_orientation


def test_annihilate_negative_triple():
    st_ = ParticleState.create([0.0, 1e-7, 2e-7], [-1, 1, -1])
    new, ev = annihilate(st_, [[0, 1, 2]])
    assert ev[0].survivor_orientation == -1


def test_annihilate_same_sign_raises():
    with pytest.raises(IntegrationError):
        annihilate(ParticleState.create([0.0, 1e-7], [1, 1]), [[0, 1]])


def test_annihilate_rejects_nonadjacent():
    with pytest.raises(ValueError):
        annihilate(ParticleState.create([0.0, 1.0, 2.0], [1, -1, 1]), [[0, 2]])


def test_find_clusters():
    x = np.array([0.0, 1e-6, 1.0, 2.0, 2.0 + 1e-6, 2.0 + 2e-6])
    assert find_clusters(x, 1e-5) == [[0, 1], [3, 4, 5]]


# -- step function and envelope --------------------------------------------


def test_step_function_single():
    rec = evolve(ParticleState.create([0.0], [1]), 1.0)
    assert step_function(rec, 0.5, [1.0, -1.0, 0.0]).tolist() == [1, 0, 0]


def test_step_function_positive_pair():
    rec = evolve(pair((1, 1), (0.0, 1.0)), 0.01)
    assert step_function(rec, 0.0, [2.0])[0] == 2


def test_envelope_at_collision_points():
    rec = evolve(pair(), 1.0)
    e = rec.events[0]
    assert upper_envelope(rec, e.time, [e.location])[0] == 1
    rec = evolve(pair((-1, 1)), 1.0)
    e = rec.events[0]
    assert upper_envelope(rec, e.time, [e.location])[0] == 0


def test_envelope_off_particles_equals_step():
    rec = evolve(pair(), 1.0)
    x = np.array([-3.0, -0.2, 0.2, 3.0])
    for t in (0.0, 0.1, 0.5):
        assert np.array_equal(upper_envelope(rec, t, x), step_function(rec, t, x))


def test_envelope_at_particle_positions():
    rec = evolve(pair(), 1.0)
    x = rec.positions_at(0.1)
    # at a +1 particle the envelope takes the upper value, at a -1 particle too
    assert upper_envelope(rec, 0.1, x).tolist() == [1, 1]


# -- export -----------------------------------------------------------------


def test_exports(tmp_path):
    rec = evolve(ParticleState.create([-0.5, 0.0, 0.5], [1, -1, 1]), 0.5)
    export_csv(rec, tmp_path / "t.csv")
    export_events(rec, tmp_path / "e.json")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["time", "x1", "x2", "x3"]
    assert rows[-1][2] == "" and rows[-1][3] == "" and rows[-1][1] != ""
    ev = json.loads((tmp_path / "e.json").read_text())
    assert set(ev[0]) >= {"time", "location", "cluster", "survivor"}
    assert ev[0]["survivor"] == 0


# -- properties -------------------------------------------------------------


def random_instance(rng, n_max=8):
    n = int(rng.integers(2, n_max + 1))
    x = np.sort(rng.uniform(0.0, 1.0, n))
    b = rng.choice([-1, 1], n)
    return ParticleState.create(x, b)


def alternating(ev):
    o = np.array(ev.orientations)
    return bool(np.all(o[1:] * o[:-1] == -1))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_invariants(seed):
    st_ = random_instance(np.random.default_rng(seed))
    rec = evolve(st_, 1.0)
    assert all(alternating(e) for e in rec.events)
    # orientation sum conserved
    total = int(st_.orientations.sum())
    for k in range(rec.times.size):
        assert int(rec.orientations[rec.alive[k]].sum()) == total
    # centre of mass constant before the first collision
    first = rec.first_collision_time()
    pre = rec.times < first
    sums = np.array([rec.positions[k][rec.alive[k]].sum() for k in np.flatnonzero(pre)])
    assert np.max(np.abs(sums - sums[0])) <= 1e-8
    # same-sign neighbours keep a distance of at least half the threshold
    for k in range(rec.times.size):
        a = np.flatnonzero(rec.alive[k])
        x, b = rec.positions[k][a], rec.orientations[a]
        same = b[1:] * b[:-1] == 1
        assert np.all(np.diff(x)[same] >= 0.5e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8))
def test_random_alternating_chains_fully_resolve(seed, n):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.0, 1.0, n))
    if np.min(np.diff(x)) < 1e-3:
        x = np.linspace(0, 1, n)
    b = np.array([(-1) ** i for i in range(n)])
    rec = evolve(ParticleState.create(x, b), 50.0)
    assert len(rec.final_state.survivors) == n % 2
    assert int(rec.final_state.total_orientation) == int(b.sum())
