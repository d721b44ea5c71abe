"""Signed particle system with annihilation.

Survivors move by

    dx_i/dt = c0 sum_{j != i} b_i b_j / (x_i - x_j) - b_i sigma

Opposite-sign neighbours attract and collide in finite time; colliding
clusters annihilate in adjacent ``+-`` pairs, and an odd cluster leaves a
single survivor whose orientation is the cluster sum.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

__all__ = [
    "ParticleState",
    "CollisionEvent",
    "TrajectoryRecord",
    "EvolveControls",
    "IntegrationError",
    "rhs",
    "velocity_derivative",
    "evolve",
    "annihilate",
    "find_clusters",
    "step_function",
    "upper_envelope",
    "export_csv",
    "export_events",
]

log = logging.getLogger(__name__)


class IntegrationError(RuntimeError):
    """Step underflow, same-sign approach or another integration failure."""


@dataclass(frozen=True)
class ParticleState:
    """Positions for all original indices; only ``survivors`` are active.

    Removed particles keep the position they had when annihilated.
    """

    time: float
    positions: np.ndarray
    orientations: np.ndarray
    survivors: tuple[int, ...]
    mobility: float = 1.0
    external_force: float = 0.0

    @classmethod
    def create(cls, positions: Sequence[float], orientations: Sequence[int], mobility: float = 1.0,
               external_force: float = 0.0, time: float = 0.0) -> "ParticleState":
        x = np.asarray(positions, dtype=float).copy()
        b = np.asarray(orientations, dtype=int).copy()
        if x.ndim != 1 or x.shape != b.shape:
            raise ValueError("positions and orientations must be 1-d of equal length")
        if x.size == 0:
            raise ValueError("need at least one particle")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions must be finite")
        if not np.all(np.abs(b) == 1):
            raise ValueError("orientations must be +1 or -1")
        if np.any(np.diff(x) <= 0):
            raise ValueError("positions must be strictly increasing")
        if not mobility > 0:
            raise ValueError("mobility must be positive")
        return cls(float(time), x, b, tuple(range(x.size)), float(mobility), float(external_force))

    @property
    def n(self) -> int:
        return self.positions.size

    @property
    def total_orientation(self) -> int:
        return int(self.orientations[list(self.survivors)].sum()) if self.survivors else 0

    def survivor_positions(self) -> np.ndarray:
        return self.positions[list(self.survivors)]

    def survivor_orientations(self) -> np.ndarray:
        return self.orientations[list(self.survivors)]


@dataclass(frozen=True)
class CollisionEvent:
    time: float
    location: float
    cluster: tuple[int, ...]
    removed: tuple[int, ...]
    survivor: int | None = None
    survivor_orientation: int | None = None
    # orientations of the cluster, left to right
    orientations: tuple[int, ...] = ()

    @property
    def even(self) -> bool:
        return len(self.cluster) % 2 == 0

    def to_dict(self) -> dict:
        return {"time": self.time, "location": self.location, "cluster": list(self.cluster),
                "removed": list(self.removed), "survivor": self.survivor,
                "survivor_orientation": self.survivor_orientation,
                "orientations": list(self.orientations)}


@dataclass(frozen=True)
class EvolveControls:
    """Integrator settings.

    ``sample_times`` are hit exactly; every accepted step is recorded too.
    """

    tolerance: float = 1e-10
    collision_threshold: float = 1e-6
    cluster_radius: float = 1e-5
    gap_safety: float = 0.01
    max_steps: int = 2_000_000
    min_step: float = 1e-18
    sample_times: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.tolerance > 0 and self.collision_threshold > 0 and self.cluster_radius > 0):
            raise ValueError("tolerances must be positive")
        if self.cluster_radius < self.collision_threshold:
            raise ValueError("cluster_radius must be at least the collision threshold")


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Recorded trajectory: one row per accepted step (and per event)."""

    times: np.ndarray
    positions: np.ndarray  # (m, N), removed particles frozen at their last position
    velocities: np.ndarray  # (m, N), zero for removed particles
    alive: np.ndarray  # (m, N) bool
    orientations: np.ndarray
    events: tuple[CollisionEvent, ...]
    mobility: float
    external_force: float
    final_state: ParticleState

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def _row(self, t: float) -> int:
        if t < self.times[0] - 1e-14 or t > self.times[-1] + 1e-14:
            raise ValueError(f"t={t} outside record range [{self.times[0]}, {self.times[-1]}]")
        return int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 1))

    def state_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Positions (cubic Hermite between steps) and alive mask at ``t``."""
        i = self._row(t)
        alive = self.alive[i]
        if i + 1 >= self.times.size or t <= self.times[i]:
            return self.positions[i].copy(), alive.copy()
        t0, t1 = self.times[i], self.times[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        p0, p1 = self.positions[i], self.positions[i + 1]
        m0, m1 = self.velocities[i] * h, self.velocities[i + 1] * h
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        x = h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1
        x = np.where(alive, x, p0)
        return x, alive.copy()

    def positions_at(self, t: float) -> np.ndarray:
        """Positions at ``t``; removed particles stay at their final position."""
        return self.state_at(t)[0]

    def survivors_at(self, t: float) -> tuple[int, ...]:
        return tuple(np.flatnonzero(self.state_at(t)[1]).tolist())

    def first_collision_time(self) -> float:
        return self.events[0].time if self.events else np.inf


# ---------------------------------------------------------------------------
# dynamics


def _forces(x: np.ndarray, b: np.ndarray, c0: float, sigma: float) -> np.ndarray:
    d = x[:, None] - x[None, :]
    np.fill_diagonal(d, np.inf)
    return c0 * b * ((b[None, :] / d).sum(axis=1)) - b * sigma


def rhs(state: ParticleState) -> np.ndarray:
    """Velocities of the survivors (in survivor order)."""
    x = state.survivor_positions()
    b = state.survivor_orientations()
    if x.size > 1 and np.any(np.diff(x) <= 0):
        raise ValueError("survivor positions must be strictly increasing")
    return _forces(x, b, state.mobility, state.external_force)


def velocity_derivative(state: ParticleState, h: float = 1e-6) -> np.ndarray:
    """Time derivative of the survivor velocities along the flow.

    Centred difference of the right side along the trajectory direction.
    """
    x = state.survivor_positions()
    b = state.survivor_orientations()
    f = _forces(x, b, state.mobility, state.external_force)
    fp = _forces(x + h * f, b, state.mobility, state.external_force)
    fm = _forces(x - h * f, b, state.mobility, state.external_force)
    return (fp - fm) / (2 * h)


# Dormand-Prince 5(4) tableau
_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_B4 = np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _dp_step(f, y, h, f0):
    k = [f0]
    for i in range(1, 7):
        yi = y + h * sum(a * kk for a, kk in zip(_A[i], k))
        k.append(f(yi))
    y5 = y + h * sum(c * kk for c, kk in zip(_B5, k))
    err = h * sum((c5 - c4) * kk for c5, c4, kk in zip(_B5, _B4, k))
    return y5, k[-1], float(np.max(np.abs(err))) if err.size else 0.0


def find_clusters(x: np.ndarray, radius: float) -> list[list[int]]:
    """Maximal runs of adjacent points all within ``radius`` of their midpoint.

    Returns runs of length >= 2 as lists of positions in ``x``.
    """
    out = []
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[j + 1] - x[i] <= 2 * radius:
            j += 1
        if j > i:
            out.append(list(range(i, j + 1)))
        i = j + 1
    return out


def annihilate(state: ParticleState, clusters: Sequence[Sequence[int]], time: float | None = None):
    """Apply the annihilation rule to ``clusters`` of original indices.

    Each cluster must be a run of adjacent survivors with alternating
    orientations.  Even clusters vanish.  An odd cluster keeps the member
    with the lowest index whose orientation equals the cluster sum, moved
    to the mean position of the cluster.
    """
    t = state.time if time is None else float(time)
    positions = state.positions.copy()
    survivors = list(state.survivors)
    events = []
    for cluster in clusters:
        cluster = sorted(cluster, key=lambda i: positions[i])
        if len(cluster) < 2:
            raise ValueError("a cluster needs at least two particles")
        if any(i not in survivors for i in cluster):
            raise ValueError("cluster contains a removed particle")
        pos_in_s = [survivors.index(i) for i in cluster]
        if pos_in_s != list(range(pos_in_s[0], pos_in_s[0] + len(cluster))):
            raise ValueError("cluster members must be adjacent survivors")
        b = state.orientations[cluster]
        if np.any(b[1:] * b[:-1] != -1):
            raise IntegrationError(f"non-alternating collision cluster {cluster} with orientations {b.tolist()}")
        y = float(np.mean(positions[cluster]))
        total = int(b.sum())
        if total == 0:
            keep = None
        else:
            keep = min(i for i in cluster if state.orientations[i] == total)
        removed = tuple(sorted(i for i in cluster if i != keep))
        positions[list(removed)] = positions[list(removed)]  # frozen at last position
        if keep is not None:
            positions[keep] = y
        survivors = [i for i in survivors if i not in removed]
        events.append(CollisionEvent(t, y, tuple(cluster), removed, keep,
                                     None if keep is None else total, tuple(b.tolist())))
    new = replace(state, time=t, positions=positions, survivors=tuple(survivors))
    sx = new.survivor_positions()
    if sx.size > 1 and np.any(np.diff(sx) <= 0):
        raise IntegrationError("ordering lost after annihilation")
    return new, events


class _Recorder:
    def __init__(self, n):
        self.t, self.x, self.v, self.alive = [], [], [], []
        self.n = n

    def add(self, t, state: ParticleState, vel):
        s = list(state.survivors)
        v = np.zeros(self.n)
        v[s] = vel
        a = np.zeros(self.n, dtype=bool)
        a[s] = True
        self.t.append(t)
        self.x.append(state.positions.copy())
        self.v.append(v)
        self.alive.append(a)


def evolve(state: ParticleState, t_end: float, controls: EvolveControls | None = None) -> TrajectoryRecord:
    """Integrate to ``t_end`` handling collisions and annihilation."""
    ctl = controls or EvolveControls()
    if not t_end > state.time:
        raise ValueError("t_end must exceed the initial time")
    sx = state.survivor_positions()
    if sx.size > 1 and np.any(np.diff(sx) <= 0):
        raise ValueError("survivor positions must be strictly increasing")
    samples = sorted(float(s) for s in ctl.sample_times if state.time < s <= t_end)
    rec = _Recorder(state.n)
    events: list[CollisionEvent] = []
    c0, sigma = state.mobility, state.external_force
    t = state.time
    cur = state
    rec.add(t, cur, rhs(cur) if cur.survivors else np.zeros(0))
    h_prop = 1e-3
    steps = 0
    si = 0

    while t < t_end:
        s = list(cur.survivors)
        y = cur.positions[s]
        b = cur.orientations[s]
        if len(s) == 0 or (len(s) == 1 and sigma == 0.0):
            break
        f = lambda z: _forces(z, b, c0, sigma)  # noqa: E731
        f0 = f(y)
        gaps = np.diff(y)
        t_stop = samples[si] if si < len(samples) else t_end
        cap = ctl.gap_safety * float(np.min(gaps)) ** 2 / c0 if gaps.size else np.inf
        h = min(h_prop, cap, t_stop - t)
        while True:
            steps += 1
            if steps > ctl.max_steps:
                raise IntegrationError("maximum number of steps exceeded")
            if h < ctl.min_step:
                raise IntegrationError(f"step size underflow at t={t}")
            y_new, f_new, err = _dp_step(f, y, h, f0)
            new_gaps = np.diff(y_new)
            if err <= ctl.tolerance and np.all(new_gaps > 0):
                break
            fac = 0.9 * (ctl.tolerance / max(err, 1e-300)) ** 0.2 if err > ctl.tolerance else 0.5
            h *= min(0.5, max(0.1, fac))
        fac = 0.9 * (ctl.tolerance / max(err, 1e-300)) ** 0.2
        h_prop = h * min(5.0, max(0.2, fac))
        t_new = t + h
        if t_stop - t_new <= 1e-14 * max(1.0, abs(t_stop)):
            t_new = t_stop
        same = b[1:] * b[:-1] == 1
        if np.any(new_gaps[same] < 0.5 * ctl.collision_threshold):
            raise IntegrationError("same-sign particles approached below half the collision threshold")
        opp_hit = (~same) & (new_gaps < ctl.collision_threshold)
        if np.any(same & (new_gaps < ctl.collision_threshold)):
            raise IntegrationError("collision threshold reached by a same-sign pair")
        if np.any(opp_hit):
            # bisect the first crossing of the threshold inside the step
            lo, hi = 0.0, h
            while hi - lo > 1e-10 * max(1.0, h) and hi - lo > 1e-16:
                mid = 0.5 * (lo + hi)
                ym, _, _ = _dp_step(f, y, mid, f0)
                if np.min(np.diff(ym)[~same]) < ctl.collision_threshold:
                    hi = mid
                else:
                    lo = mid
            y_hit, _, _ = _dp_step(f, y, hi, f0)
            t_hit = t + hi
            pos = cur.positions.copy()
            pos[s] = y_hit
            cur = replace(cur, time=t_hit, positions=pos)
            rec.add(t_hit, cur, f(y_hit))
            g = np.diff(y_hit)
            clusters_local = find_clusters(y_hit, ctl.cluster_radius)
            clusters_local = [c for c in clusters_local
                              if np.any(g[c[0]:c[-1]] < ctl.collision_threshold)]
            dmin = float(np.min(g[~same]))
            t_event = t_hit + dmin**2 / (4 * c0)
            clusters = [[s[k] for k in c] for c in clusters_local]
            cur, evs = annihilate(cur, clusters, time=t_event)
            events.extend(evs)
            t = t_event
            for e in evs:
                log.debug("collision t=%.12g at %.6g cluster=%s", e.time, e.location, e.cluster)
            rec.add(t, cur, rhs(cur) if cur.survivors else np.zeros(0))
            h_prop = 1e-3
            while si < len(samples) and samples[si] <= t:
                si += 1
            continue
        pos = cur.positions.copy()
        pos[s] = y_new
        cur = replace(cur, time=t_new, positions=pos)
        t = t_new
        rec.add(t, cur, f_new)
        if si < len(samples) and t >= samples[si]:
            si += 1

    if t < t_end:
        # nothing moves any more: hold the state up to t_end
        cur = replace(cur, time=float(t_end))
        for ts in samples[si:]:
            rec.add(ts, cur, np.zeros(len(cur.survivors)))
        if not rec.t or rec.t[-1] < t_end:
            rec.add(float(t_end), cur, np.zeros(len(cur.survivors)))
    return TrajectoryRecord(np.array(rec.t), np.array(rec.x), np.array(rec.v), np.array(rec.alive),
                            state.orientations.copy(), tuple(events), c0, sigma, cur)


# ---------------------------------------------------------------------------
# step functions


def step_function(record: TrajectoryRecord, t: float, x) -> np.ndarray:
    """``v(t, x) = sum_i b_i H(x - x_i(t))`` over survivors, ``H(0) = 0``."""
    pos, alive = record.state_at(t)
    x = np.asarray(x, dtype=float)
    b = record.orientations[alive]
    p = pos[alive]
    return (b * (x[..., None] > p)).sum(axis=-1).astype(int)


def upper_envelope(record: TrajectoryRecord, t: float, x, atol: float = 1e-12) -> np.ndarray:
    """Upper semicontinuous envelope ``v*`` including the collision indicator."""
    pos, alive = record.state_at(t)
    x = np.asarray(x, dtype=float)
    b = record.orientations[alive]
    p = pos[alive]
    xe = x[..., None]
    at = np.abs(xe - p) <= atol
    heav = np.where(b > 0, (xe > p) | at, xe > p)
    v = (b * heav).sum(axis=-1)
    chi = np.zeros(x.shape, dtype=int)
    for e in record.events:
        if e.even and e.orientations and e.orientations[0] == 1 and abs(e.time - t) <= atol:
            chi = chi + (np.abs(x - e.location) <= atol)
    return (v + chi).astype(int)


# ---------------------------------------------------------------------------
# export


def export_csv(record: TrajectoryRecord, path) -> None:
    """Time followed by one column per original index (blank once removed)."""
    n = record.positions.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + [f"x{i + 1}" for i in range(n)])
        for t, x, a in zip(record.times, record.positions, record.alive):
            w.writerow([repr(float(t))] + [repr(float(xi)) if ai else "" for xi, ai in zip(x, a)])


def export_events(record: TrajectoryRecord, path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump([e.to_dict() for e in record.events], fh, indent=2)
        fh.write("\n")
