"""Phase-field evolution on a truncated domain and layer tracking.

The field solves ``eps v_t = I[v] - W'(v)/eps``.  It is split as
``v = background + w`` where the background is a fixed sum of rescaled
layers (width ``eps_bg``, default ``eps``) carrying the net jump and ``w``
decays at both ends.  ``I[w]`` is applied spectrally on the periodic
window and implicitly in time; ``I[background]`` is computed once by
quadrature of the layer profile; ``W'`` is explicit::

    w_new = F^{-1}[ F(chi (w + dt/eps (I[bg] - W'(v)/eps))) / (1 + dt |xi| / eps) ]

``chi`` is a smooth cutoff that vanishes at the window edges (sponge).
"""
from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .potential import Potential
from .profiles import LayerProfile, layer_operator, oriented_layer

__all__ = [
    "PhaseFieldState",
    "InitialDataSpec",
    "TransitionTrack",
    "Crossing",
    "PhaseFieldError",
    "build_initial",
    "default_half_width",
    "default_dt",
    "step",
    "run",
    "track_transitions",
    "export_snapshot_csv",
    "export_snapshot_binary",
    "read_snapshot_binary",
    "export_track_csv",
]

log = logging.getLogger(__name__)

SPONGE_FRACTION = 0.1


class PhaseFieldError(RuntimeError):
    """CFL violation, NaN, plateau drift or a layer entering the sponge."""


@dataclass(frozen=True)
class InitialDataSpec:
    centers: tuple[float, ...]
    orientations: tuple[int, ...]
    perturbation: Callable[[np.ndarray], np.ndarray] | None = None
    perturbation_sup: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float)
        if c.size != len(self.orientations) or c.size == 0:
            raise ValueError("centers and orientations must be non-empty and of equal length")
        if np.any(np.diff(c) <= 0):
            raise ValueError("centers must be strictly increasing")
        if any(b not in (1, -1) for b in self.orientations):
            raise ValueError("orientations must be +1 or -1")

    @classmethod
    def with_sine_perturbation(cls, centers, orientations, amplitude: float, wavenumber: float = 3.0):
        """Perturbation ``amplitude * sin(wavenumber x) * exp(-x**2/8)``."""
        amplitude = float(amplitude)
        if amplitude == 0:
            return cls(tuple(centers), tuple(orientations))

        def phi(x):
            return amplitude * np.sin(wavenumber * x) * np.exp(-x**2 / 8)

        return cls(tuple(centers), tuple(orientations), phi, abs(amplitude))

    @property
    def jump(self) -> int:
        return int(sum(self.orientations))


@dataclass(frozen=True, eq=False)
class PhaseFieldState:
    """Field on the periodic window, nodes ``x_j = -X + (j + 1/2) dx``, ``j < n``."""

    grid: np.ndarray
    values: np.ndarray
    epsilon: float
    time: float
    background: np.ndarray
    background_operator: np.ndarray  # I[background] on the grid
    sponge: np.ndarray
    n_layers: int = 1
    plateau_left: float = 0.0
    plateau_right: float = 0.0

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def half_width(self) -> float:
        return float(-self.grid[0] + 0.5 * self.dx)

    @property
    def perturbation(self) -> np.ndarray:
        return self.values - self.background

    def shifted_levels(self, k: int) -> "PhaseFieldState":
        """Add the integer ``k`` to the field (and to the background)."""
        k = int(k)
        return replace(self, values=self.values + k, background=self.background + k,
                       plateau_left=self.plateau_left + k, plateau_right=self.plateau_right + k)

    def with_values(self, values) -> "PhaseFieldState":
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True)
class Crossing:
    position: float
    level: float
    direction: int  # +1 up, -1 down


@dataclass(eq=False)
class TransitionTrack:
    """Tracked crossings per layer id; NaN once a layer is gone."""

    times: list[float] = field(default_factory=list)
    positions: list[list[float]] = field(default_factory=list)  # per layer, per sample
    levels: list[float] = field(default_factory=list)
    directions: list[int] = field(default_factory=list)
    annihilated_at: list[float | None] = field(default_factory=list)
    final_state: PhaseFieldState | None = None

    @property
    def n_layers(self) -> int:
        return len(self.levels)

    def position_array(self) -> np.ndarray:
        return np.array(self.positions, dtype=float).reshape(self.n_layers, len(self.times))

    def alive_at(self, k: int) -> list[int]:
        p = self.position_array()[:, k]
        return [i for i in range(self.n_layers) if np.isfinite(p[i])]


# ---------------------------------------------------------------------------
# construction


def default_half_width(centers: Sequence[float], epsilon: float) -> float:
    return float(np.max(np.abs(centers)) + 4.0 + 20.0 * epsilon)


def default_dt(epsilon: float, potential: Potential) -> float:
    return 0.2 * epsilon**2 / potential.max_curvature()


def _sponge(x: np.ndarray, half_width: float) -> np.ndarray:
    width = SPONGE_FRACTION * half_width
    d = half_width - np.abs(x)  # distance to the window edge
    s = np.clip(d / width, 0.0, 1.0)
    return np.sin(0.5 * np.pi * s) ** 2


def build_initial(spec: InitialDataSpec, layer: LayerProfile, epsilon: float,
                  potential: Potential, half_width: float | None = None, dx: float | None = None,
                  background_scale: float | None = None, background: str = "quadrature") -> PhaseFieldState:
    """Well-prepared initial field ``sum u((x - x_i)/eps; b_i) + phi(x)``.

    Parameters
    ----------
    half_width
        Window half width ``X``; defaults to ``max|x_i| + 4 + 20 eps``.
    dx
        Grid spacing; defaults to ``eps/32``.  The node count is rounded up
        to an even number.
    background_scale
        Width of the background layers (default ``eps``).
    background
        ``"quadrature"`` computes ``I[background]`` by quadrature of the
        layer; ``"identity"`` uses ``I[u] = W'(u)`` instead.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    centers = np.asarray(spec.centers, dtype=float)
    X = default_half_width(centers, epsilon) if half_width is None else float(half_width)
    if np.max(np.abs(centers)) + 20 * epsilon > X * (1 - SPONGE_FRACTION):
        raise ValueError("centers must lie at least 20 eps inside the sponge-free window")
    dx = epsilon / 32 if dx is None else float(dx)
    if not dx > 0:
        raise ValueError("dx must be positive")
    n = int(np.ceil(2 * X / dx))
    n += n % 2
    # cell-centred nodes: symmetric about 0 without a node at 0
    x = -X + (2 * X / n) * (np.arange(n) + 0.5)
    eb = epsilon if background_scale is None else float(background_scale)
    bg = np.zeros(n)
    ibg = np.zeros(n)
    op = layer_operator(layer, potential) if background == "quadrature" else None
    for c, b in zip(centers, spec.orientations):
        y = (x - c) / eb
        term = oriented_layer(y, b, layer)
        bg += term
        if op is None:
            ibg += potential.deriv1(term) / eb
        else:
            ibg += op(b * y) / eb
    pert = np.zeros(n) if spec.perturbation is None else np.asarray(spec.perturbation(x), dtype=float)
    # field: layers at scale eps, background at scale eb
    if eb == epsilon:
        v = bg + pert
    else:
        v = sum(oriented_layer((x - c) / epsilon, b, layer) for c, b in zip(centers, spec.orientations)) + pert
    return PhaseFieldState(x, v, float(epsilon), 0.0, bg, ibg, _sponge(x, X), len(centers),
                           float(v[0]), float(v[-1]))


# ---------------------------------------------------------------------------
# time stepping


def _symbol(n: int, length: float) -> np.ndarray:
    return 2 * np.pi * np.fft.rfftfreq(n, d=length / n)


def step(state: PhaseFieldState, dt: float, potential: Potential, check: bool = True) -> PhaseFieldState:
    """One implicit-explicit step of size ``dt``.

    The map is order preserving for ``dt <= default_dt``: the explicit
    reaction update is monotone under that bound, the sponge multiplies by
    a nonnegative cutoff, and ``1/(1 + c|xi|)`` has a positive kernel.
    """
    eps = state.epsilon
    if check and dt > default_dt(eps, potential) * (1 + 1e-12):
        raise PhaseFieldError(f"dt={dt:.3e} exceeds the explicit reaction bound {default_dt(eps, potential):.3e}")
    n = state.grid.size
    xi = _symbol(n, n * state.dx)
    bg = state.background
    w = state.values - bg
    rhs = w + (dt / eps) * (state.background_operator - potential.deriv1(state.values) / eps)
    rhs *= state.sponge
    w_new = np.fft.irfft(np.fft.rfft(rhs) / (1.0 + (dt / eps) * xi), n=n)
    values = bg + w_new
    if not np.all(np.isfinite(values)):
        raise PhaseFieldError(f"non-finite values at t={state.time + dt:.6g}")
    return replace(state, values=values, time=state.time + dt)


# ---------------------------------------------------------------------------
# tracking


def track_transitions(state: PhaseFieldState, plateau_tol: float = 0.25) -> list[Crossing]:
    """Half-integer level crossings ordered in ``x``.

    Levels are all half-integers between the rounded extreme values of the
    field; crossings are located by linear interpolation between the
    bracketing nodes.
    """
    v = state.values
    for name, p in (("left", v[0]), ("right", v[-1])):
        if abs(p - round(p)) > plateau_tol:
            raise PhaseFieldError(f"{name} plateau {p:.4f} is not within {plateau_tol} of an integer")
    lo = int(np.floor(np.min(v)))
    hi = int(np.ceil(np.max(v)))
    out = []
    for k in range(lo, hi):
        level = k + 0.5
        d = v - level
        idx = np.flatnonzero((d[:-1] < 0) & (d[1:] >= 0) | (d[:-1] >= 0) & (d[1:] < 0))
        for i in idx:
            x0, x1 = state.grid[i], state.grid[i + 1]
            s = d[i] / (d[i] - d[i + 1])
            out.append(Crossing(float(x0 + s * (x1 - x0)), level, 1 if d[i + 1] > d[i] else -1))
    out.sort(key=lambda c: c.position)
    return out


def _check_margin(state: PhaseFieldState, crossings: list[Crossing]) -> None:
    if not crossings:
        return
    limit = state.half_width * (1 - SPONGE_FRACTION)
    far = max(abs(c.position) for c in crossings)
    if far > limit:
        raise PhaseFieldError(f"transition at |x|={far:.4f} entered the sponge zone (|x| > {limit:.4f})")


def run(state: PhaseFieldState, t_end: float, sample_dt: float, potential: Potential,
        dt: float | None = None, snapshot_every: int = 0,
        match_radius: float | None = None) -> tuple[TransitionTrack, list[tuple[float, np.ndarray]]]:
    """Advance to ``t_end`` recording crossings every ``sample_dt``.

    Crossings are linked to the previous sample by nearest position among
    those with the same level and direction.  A layer whose crossing has no
    partner within ``match_radius`` is marked annihilated.

    Returns the track and a list of ``(time, values)`` snapshots taken every
    ``snapshot_every`` samples (none when 0).  The final state is appended
    as the last snapshot when snapshots are requested.
    """
    dt = default_dt(state.epsilon, potential) if dt is None else float(dt)
    if not (t_end > state.time and sample_dt > 0):
        raise ValueError("need t_end > time and sample_dt > 0")
    match_radius = 20 * state.epsilon + 0.5 if match_radius is None else match_radius
    n_samples = int(round((t_end - state.time) / sample_dt))
    sample_times = state.time + sample_dt * np.arange(1, n_samples + 1)
    if n_samples == 0 or sample_times[-1] < t_end - 1e-12:
        sample_times = np.append(sample_times, t_end)

    track = TransitionTrack()
    cross = track_transitions(state)
    _check_margin(state, cross)
    track.times.append(state.time)
    for c in cross:
        track.positions.append([c.position])
        track.levels.append(c.level)
        track.directions.append(c.direction)
        track.annihilated_at.append(None)
    snaps = [(state.time, state.values.copy())] if snapshot_every else []

    cur = state
    for k, ts in enumerate(sample_times, start=1):
        nsteps = max(1, int(np.ceil((ts - cur.time) / dt - 1e-9)))
        if (ts - cur.time) / nsteps > dt:
            nsteps += 1
        h = (ts - cur.time) / nsteps
        for _ in range(nsteps):
            cur = step(cur, h, potential)
        cur = replace(cur, time=float(ts))
        cross = track_transitions(cur)
        _check_margin(cur, cross)
        _link(track, cross, float(ts), match_radius)
        if snapshot_every and k % snapshot_every == 0:
            snaps.append((float(ts), cur.values.copy()))
    if snapshot_every and snaps[-1][0] != cur.time:
        snaps.append((cur.time, cur.values.copy()))
    track.final_state = cur
    return track, snaps


def _link(track: TransitionTrack, cross: list[Crossing], t: float, radius: float) -> None:
    prev = track.position_array()[:, -1] if track.n_layers else np.zeros(0)
    track.times.append(t)
    used = set()
    new_pos = [np.nan] * track.n_layers
    # greedy nearest matching over all admissible pairs
    pairs = []
    for i in range(track.n_layers):
        if not np.isfinite(prev[i]):
            continue
        for j, c in enumerate(cross):
            if c.level == track.levels[i] and c.direction == track.directions[i]:
                d = abs(c.position - prev[i])
                if d <= radius:
                    pairs.append((d, i, j))
    taken_i = set()
    for d, i, j in sorted(pairs):
        if i in taken_i or j in used:
            continue
        taken_i.add(i)
        used.add(j)
        new_pos[i] = cross[j].position
    for i in range(track.n_layers):
        track.positions[i].append(new_pos[i])
        if np.isfinite(prev[i]) and not np.isfinite(new_pos[i]) and track.annihilated_at[i] is None:
            track.annihilated_at[i] = t
    for j, c in enumerate(cross):
        if j not in used:
            track.positions.append([np.nan] * (len(track.times) - 1) + [c.position])
            track.levels.append(c.level)
            track.directions.append(c.direction)
            track.annihilated_at.append(None)


# ---------------------------------------------------------------------------
# export


def export_snapshot_csv(state_or_grid, values=None, path=None) -> None:
    """Write ``x, v`` columns.  Accepts a state or ``(grid, values)``."""
    if isinstance(state_or_grid, PhaseFieldState):
        grid, values = state_or_grid.grid, state_or_grid.values
    else:
        grid = state_or_grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "v"])
        for a, b in zip(grid, values):
            w.writerow([repr(float(a)), repr(float(b))])


def export_snapshot_binary(state: PhaseFieldState, path, values=None, time=None) -> None:
    """Little-endian float64: node count, X, eps, time, then the values."""
    vals = state.values if values is None else np.asarray(values)
    t = state.time if time is None else float(time)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4d", float(vals.size), state.half_width, state.epsilon, t))
        fh.write(np.asarray(vals, dtype="<f8").tobytes())


def read_snapshot_binary(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        n, X, eps, t = struct.unpack("<4d", fh.read(32))
        vals = np.frombuffer(fh.read(), dtype="<f8")
    if vals.size != int(n):
        raise ValueError("corrupt snapshot: value count does not match header")
    return {"n": int(n), "half_width": X, "epsilon": eps, "time": t}, vals.copy()


def export_track_csv(track: TransitionTrack, path) -> None:
    """Rows ``t, layer id, position, level`` for every live crossing."""
    p = track.position_array()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "layer", "position", "level"])
        for k, t in enumerate(track.times):
            for i in range(track.n_layers):
                if np.isfinite(p[i, k]):
                    w.writerow([repr(float(t)), i, repr(float(p[i, k])), repr(track.levels[i])])
