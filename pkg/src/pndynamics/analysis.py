"""Numerical checks of the particle limit.

Units: the half Laplacian has symbol ``-|xi|`` and the layer tails are
``-1/(alpha pi x)``.  The ansatz

    vbar = sum_i (u - eps cbar_i psi)((x - xbar_i)/eps; b_i) + eps (sigma - delta)/alpha

is a supersolution when the potential has unit mobility (``c0 = 1``, so
that the corrector exists) and ``xbar`` solves the perturbed particle
system with mobility ``c0/pi`` (see :func:`profiles.interaction_mobility`)
and external force ``sigma``.  Phase-field runs are compared with the
particle system of mobility ``c0/pi``.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .halflaplacian import graded_grid
from .particles import (EvolveControls, ParticleState, TrajectoryRecord, evolve, rhs,
                        step_function, velocity_derivative)
from .phasefield import InitialDataSpec, build_initial, default_dt, run
from .potential import Potential
from .profiles import (CorrectorProfile, GridSpec, LayerProfile, corrector_operator,
                       interaction_mobility, layer_operator, oriented_corrector,
                       oriented_corrector_derivative, oriented_layer, oriented_layer_derivative,
                       solve_corrector, solve_layer)

__all__ = [
    "SupersolutionSpec",
    "ConvergenceReport",
    "Scenario",
    "AnalysisError",
    "monotone_nonincreasing",
    "make_supersolution",
    "residual_grid",
    "evaluate_supersolution",
    "supersolution_residual",
    "tune_delta",
    "check_patching_inequality",
    "check_dipole_removal",
    "lemma_constants",
    "asymmetric_split_experiment",
    "perturbation_stability_check",
    "tail_law_check",
    "convergence_sweep",
    "emit_report",
    "read_report_table",
    "THREADS_ENV",
]

log = logging.getLogger(__name__)

THREADS_ENV = "PNDYNAMICS_THREADS"


class AnalysisError(RuntimeError):
    """Violated precondition or inconsistent tracking."""


def monotone_nonincreasing(values: Sequence[float], slack: float = 0.1, floor: float = 1e-9) -> bool:
    """``v[k+1] <= (1 + slack) v[k] + floor`` for all consecutive pairs."""
    v = [float(a) for a in values]
    return all(b <= (1 + slack) * a + floor for a, b in zip(v, v[1:]))


# ---------------------------------------------------------------------------
# supersolution ansatz


@dataclass(frozen=True, eq=False)
class SupersolutionSpec:
    """Ansatz data.  ``record`` solves the perturbed particle system."""

    record: TrajectoryRecord
    sigma_bar: float
    delta_eps: float
    theta_eps: float
    epsilon: float
    offset: int = 0

    def __post_init__(self):
        if self.sigma_bar < self.delta_eps:
            raise ValueError("sigma_bar must be at least delta_eps")
        if not (self.epsilon > 0 and self.theta_eps > 0):
            raise ValueError("epsilon and theta_eps must be positive")

    def diagnostics(self) -> dict:
        return {"epsilon": self.epsilon, "theta_eps": self.theta_eps, "delta_eps": self.delta_eps,
                "eps_over_theta2": self.epsilon / self.theta_eps**2, "sigma_bar": self.sigma_bar}


def make_supersolution(positions, orientations, layer: LayerProfile, epsilon: float, sigma_bar: float,
                       delta_eps: float, theta_eps: float | None = None, t_end: float = 1.0,
                       offset: int = 0) -> SupersolutionSpec:
    """Evolve the perturbed particle system and wrap it as an ansatz."""
    theta = epsilon**0.4 if theta_eps is None else theta_eps
    state = ParticleState.create(positions, orientations, mobility=interaction_mobility(layer),
                                 external_force=sigma_bar)
    rec = evolve(state, t_end)
    return SupersolutionSpec(rec, float(sigma_bar), float(delta_eps), float(theta), float(epsilon), offset)


def _kinematics(spec: SupersolutionSpec, t: float):
    rec = spec.record
    if t < rec.t_start or t > rec.t_end:
        raise ValueError(f"t={t} beyond trajectory range")
    if rec.events and t >= rec.events[0].time:
        raise ValueError("t is not before the first collision of the perturbed trajectory")
    pos = rec.positions_at(t)
    st = ParticleState(t, pos, rec.orientations, tuple(range(pos.size)), rec.mobility, rec.external_force)
    return pos, rec.orientations, rhs(st), velocity_derivative(st)


def evaluate_supersolution(spec: SupersolutionSpec, t: float, x_grid, layer: LayerProfile,
                           corrector: CorrectorProfile, alpha: float | None = None) -> np.ndarray:
    """Pointwise values of the ansatz at time ``t``."""
    x = np.asarray(x_grid, dtype=float)
    eps = spec.epsilon
    alpha = layer.alpha if alpha is None else alpha
    pos, b, c, _ = _kinematics(spec, t)
    v = np.full(x.shape, spec.offset + eps * (spec.sigma_bar - spec.delta_eps) / alpha)
    for xi, bi, ci in zip(pos, b, c):
        y = (x - xi) / eps
        v += oriented_layer(y, bi, layer) - eps * ci * oriented_corrector(y, bi, corrector)
    return v


def residual_grid(positions, epsilon: float, span: float = 2.0, fine: int = 801) -> np.ndarray:
    """Evaluation grid: graded around each particle (scale ``eps``) plus a uniform cover."""
    pos = np.asarray(positions, dtype=float)
    local = graded_grid(0.02, 2.0, 1.08, 200.0)
    pts = [np.linspace(pos.min() - span, pos.max() + span, fine)]
    for p in pos:
        g = p + epsilon * local
        pts.append(g[np.abs(g - p) <= span])
    return np.unique(np.concatenate(pts))


def supersolution_residual(spec: SupersolutionSpec, t: float, x_grid, potential: Potential,
                           layer: LayerProfile, corrector: CorrectorProfile,
                           return_field: bool = False):
    """Minimum over ``x_grid`` of ``eps v_t - I[v] + W'(v)/eps`` for the ansatz."""
    x = np.asarray(x_grid, dtype=float)
    eps = spec.epsilon
    pos, b, c, cdot = _kinematics(spec, t)
    if pos.size > 1 and np.min(np.diff(pos)) < spec.theta_eps:
        raise AnalysisError("gap condition violated: minimal gap below theta_eps")
    alpha = potential.alpha
    Iu = layer_operator(layer, potential)
    Ipsi = corrector_operator(corrector, layer, potential)
    v = np.full(x.shape, spec.offset + eps * (spec.sigma_bar - spec.delta_eps) / alpha)
    vt = np.zeros(x.shape)  # eps * dv/dt
    Iv = np.zeros(x.shape)
    for xi, bi, ci, cdi in zip(pos, b, c, cdot):
        y = (x - xi) / eps
        v += oriented_layer(y, bi, layer) - eps * ci * oriented_corrector(y, bi, corrector)
        vt += (-ci * oriented_layer_derivative(y, bi, layer)
               + eps * ci**2 * oriented_corrector_derivative(y, bi, corrector)
               - eps**2 * cdi * oriented_corrector(y, bi, corrector))
        Iv += (Iu(bi * y) - eps * ci * bi * Ipsi(bi * y)) / eps
    res = vt - Iv + potential.deriv1(v) / eps
    if return_field:
        return float(np.min(res)), res
    return float(np.min(res))


def tune_delta(positions, orientations, epsilon: float, potential: Potential, layer: LayerProfile,
               corrector: CorrectorProfile, sigma_margin: float = 0.0, t: float = 0.0,
               target: float = -1e-4, start: float = 1e-6, factor: float = 2.0,
               max_delta: float = 10.0, theta_eps: float | None = None) -> tuple[float, float]:
    """Smallest ``delta`` in a geometric sequence with residual ``>= target``.

    ``sigma_bar = delta + sigma_margin``.  Returns ``(delta, residual)``.
    """
    x = residual_grid(positions, epsilon)
    delta = start
    while delta <= max_delta:
        spec = make_supersolution(positions, orientations, layer, epsilon, delta + sigma_margin, delta,
                                  theta_eps, t_end=t + 1e-3)
        r = supersolution_residual(spec, t, x, potential, layer, corrector)
        if r >= target:
            return delta, r
        delta *= factor
    raise AnalysisError(f"no delta up to {max_delta} reaches residual {target}")


# ---------------------------------------------------------------------------
# patching and dipole inequalities


def _scan_points(z: float) -> np.ndarray:
    """Dense cover of [-3z, 2z], fine near both layer cores, geometric tails."""
    z = float(z)
    core = graded_grid(0.005, 1.0, 1.05, 50.0)
    lin = np.linspace(-3 * z, 2 * z, 20001)
    far = np.geomspace(max(1.0, z), 1e4 * max(1.0, z) + 1e8, 4000)
    return np.unique(np.concatenate([lin, core, core - z, -3 * z - far, 2 * z + far]))


def _check_lemma_args(c, c_prime, epsilon, theta, z, M):
    if not (epsilon > 0 and theta > 0 and M > 0):
        raise ValueError("epsilon, theta and M must be positive")
    if abs(c) > M / theta * (1 + 1e-12) or abs(c_prime) > M / theta * (1 + 1e-12):
        raise ValueError("|c|, |c'| must not exceed M/theta")
    if z < theta / epsilon * (1 - 1e-12):
        raise ValueError("z must be at least theta/epsilon")


def check_patching_inequality(c: float, c_prime: float, epsilon: float, theta: float, z: float,
                              layer: LayerProfile, corrector: CorrectorProfile,
                              M: float = 1.0) -> tuple[float, float]:
    """``(u - eps|c psi|)(y+z) - (u + eps|c' psi|)(y)`` against ``-K (|c|+|c'|) eps**2/theta``.

    Returns ``(min slack, fitted K)`` where the slack uses the fitted K.
    """
    _check_lemma_args(c, c_prime, epsilon, theta, z, M)
    y = _scan_points(z)
    lhs = ((layer(y + z) - epsilon * abs(c) * np.abs(corrector(y + z)))
           - (layer(y) + epsilon * abs(c_prime) * np.abs(corrector(y))))
    scale = (abs(c) + abs(c_prime)) * epsilon**2 / theta
    worst = float(np.min(lhs))
    if scale == 0:
        return worst, 0.0
    k = max(0.0, -worst / scale)
    return float(np.min(lhs + k * scale)), k


def check_dipole_removal(c: float, c_prime: float, epsilon: float, theta: float, z: float,
                         layer: LayerProfile, corrector: CorrectorProfile,
                         M: float = 1.0) -> tuple[float, float]:
    """``(u - eps c psi)(y+z; -1) + (u - eps c' psi)(y; +1)`` against ``K eps**2/theta**2``.

    Returns ``(max of the left side, fitted K)``.
    """
    _check_lemma_args(c, c_prime, epsilon, theta, z, M)
    y = _scan_points(z)
    lhs = (oriented_layer(y + z, -1, layer) - epsilon * c * oriented_corrector(y + z, -1, corrector)
           + oriented_layer(y, 1, layer) - epsilon * c_prime * oriented_corrector(y, 1, corrector))
    worst = float(np.max(lhs))
    return worst, max(0.0, worst * theta**2 / epsilon**2)


def lemma_constants(layer: LayerProfile, corrector: CorrectorProfile,
                    epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4), gamma: float = 0.4,
                    M: float = 1.0) -> dict:
    """Fitted patching and dipole constants over ``epsilons`` at ``theta = eps**gamma``.

    Uses ``c = c' = M/theta`` and ``z = theta/eps``.  ``bounded`` holds when
    every K is at most twice the K of the first (largest) epsilon.
    """
    rows = []
    for eps in epsilons:
        theta = eps**gamma
        z = theta / eps
        c = M / theta
        ps, pk = check_patching_inequality(c, c, eps, theta, z, layer, corrector, M)
        dm, dk = check_dipole_removal(c, c, eps, theta, z, layer, corrector, M)
        rows.append({"epsilon": eps, "theta": theta, "patching_slack": ps, "patching_K": pk,
                     "dipole_max": dm, "dipole_K": dk})
    out = {"rows": rows}
    for key in ("patching_K", "dipole_K"):
        ks = [r[key] for r in rows]
        out[key + "_bounded"] = bool(all(k <= 2 * ks[0] + 1e-12 for k in ks))
    out["min_slack"] = min(r["patching_slack"] for r in rows)
    return out


# ---------------------------------------------------------------------------
# particle experiments


def asymmetric_split_experiment(state: ParticleState, Theta: float, L: float = 26.0,
                                sigma_hat: float = 1e-3, c0: float = 1.0,
                                theta_eps: float | None = None) -> dict:
    """Shift a near-collision pair apart asymmetrically and check the outcome.

    ``state`` has one adjacent ``(+,-)`` pair ``k, k+1`` at gap ``Theta``.
    Particle ``k+1`` is moved by ``-L b Theta`` and all others by
    ``-b Theta``; the system with force ``sigma_hat`` is run to
    ``tau = L**2 Theta**2 / 6``.  Checks: (a) no collision before ``tau``;
    (b) minimal gap on ``[0, tau]`` at least ``theta_eps`` (default
    ``Theta``); (c) particle ``k`` ends at or right of the original
    ``x_{k+1}``; (d) displacement from the collision point of the original
    state stays within ``2 (L + 1) Theta``.
    """
    theta_eps = Theta if theta_eps is None else theta_eps
    x = state.survivor_positions()
    b = state.survivor_orientations()
    gaps = np.diff(x)
    cand = [i for i in range(x.size - 1) if b[i] == 1 and b[i + 1] == -1
            and abs(gaps[i] - Theta) <= 1e-9 * max(1.0, Theta)]
    if len(cand) != 1:
        raise AnalysisError("need exactly one adjacent (+,-) pair at gap Theta")
    k = cand[0]
    others = np.delete(gaps, k)
    l0 = float(np.min(gaps[np.arange(gaps.size) != k])) if others.size else np.inf
    if others.size and np.any(others < 100 * Theta):
        raise AnalysisError("other gaps must be well separated from Theta")

    base = evolve(replace(state, mobility=c0, external_force=0.0), state.time + 10 * Theta**2 / c0 + 1e-12)
    if not base.events:
        raise AnalysisError("the base pair does not collide")
    y = base.events[0].location

    xh = x - b * Theta
    xh[k + 1] = x[k + 1] - L * b[k + 1] * Theta
    tau = L**2 * Theta**2 / 6
    hat = ParticleState.create(xh, b, mobility=c0, external_force=sigma_hat)
    horizon = max(2 * tau, (L + 2) ** 2 * Theta**2 / (2 * c0))
    ctl = EvolveControls(sample_times=(tau,))
    rec = evolve(hat, horizon, ctl)
    t_hit = rec.first_collision_time()
    ts = rec.times[rec.times <= tau]
    rows = [rec.positions_at(t) for t in ts] + [rec.positions_at(tau)]
    P = np.array(rows)
    min_gap = float(np.min(np.diff(P, axis=1)))
    xk_tau = float(rec.positions_at(tau)[k])
    disp = float(np.max(np.abs(P[:, [k, k + 1]] - y)))
    bound = 2 * (L + 1) * Theta
    checks = {
        "a_no_collision_before_tau": bool(t_hit > tau),
        "b_min_gap_at_least_theta": bool(min_gap >= theta_eps),
        "c_crosses_partner_position": bool(xk_tau >= x[k + 1]),
        "d_displacement_small": bool(disp <= bound),
    }
    return {"Theta": Theta, "L": L, "sigma_hat": sigma_hat, "tau": tau, "collision_time": t_hit,
            "min_gap": min_gap, "x_k_at_tau": xk_tau, "x_k1_original": float(x[k + 1]),
            "gain_over_Theta": (xk_tau - x[k]) / Theta, "max_displacement": disp,
            "displacement_bound": bound, "l0": l0, "checks": checks,
            "passed": all(checks.values())}


def perturbation_stability_check(base: ParticleState, sigma_list: Sequence[float],
                                 eta_list: Sequence[float], tau: float = 0.05,
                                 t_end: float = 5.0, samples: int = 400) -> dict:
    """Distance between the base system and perturbed ones.

    The perturbed system has force ``sigma`` and initial positions
    ``x0 - eta b``.  For each pair ``(sigma, eta)`` the report holds the
    sup distance on ``[0, T1 - tau]`` (``[0, t_end]`` without collision),
    ``|T1bar - T1|`` and the distance between the first collision points.
    ``monotone`` records whether each quantity is nonincreasing along the
    lists (10% slack).
    """
    if len(sigma_list) != len(eta_list):
        raise ValueError("sigma_list and eta_list must have equal length")
    ref = evolve(base, base.time + t_end)
    t1 = ref.first_collision_time()
    horizon = (t1 - tau) if np.isfinite(t1) else base.time + t_end
    if horizon <= base.time:
        raise AnalysisError("tau must be smaller than the first collision time")
    grid = np.linspace(base.time, horizon, samples)
    rows = []
    x0 = base.survivor_positions()
    b = base.survivor_orientations()
    for sigma, eta in zip(sigma_list, eta_list):
        pert = ParticleState.create(x0 - eta * b, b, base.mobility, sigma, base.time)
        rec = evolve(pert, base.time + t_end)
        dist = 0.0
        for t in grid:
            dist = max(dist, float(np.max(np.abs(rec.positions_at(t) - ref.positions_at(t)))))
        t1b = rec.first_collision_time()
        if np.isfinite(t1):
            dt1 = abs(t1b - t1) if np.isfinite(t1b) else np.inf
            dloc = abs(rec.events[0].location - ref.events[0].location) if rec.events else np.inf
        else:
            dt1 = dloc = 0.0
        rows.append({"sigma": sigma, "eta": eta, "sup_distance": dist, "collision_time_gap": dt1,
                     "collision_point_gap": dloc, "collision_time": t1b})
    mono = {key: monotone_nonincreasing([r[key] for r in rows])
            for key in ("sup_distance", "collision_time_gap", "collision_point_gap")}
    return {"base_collision_time": t1, "rows": rows, "monotone": mono,
            "passed": all(mono.values())}


# ---------------------------------------------------------------------------
# tail laws


def tail_law_check(potential: Potential, grid_spec: GridSpec | None = None) -> dict:
    """Tail constants at extent ``X`` and ``2X``.

    ``K1 = sup x**2 |u - H + 1/(alpha pi x)|`` and
    ``K3 = sup x**2 |psi - K2/x|`` over ``1 <= |x| <= X/2``.
    """
    gs = grid_spec or GridSpec()
    out = {}
    for tag, spec in (("X", gs), ("2X", gs.with_extent(2 * gs.extent))):
        layer = solve_layer(potential, spec)
        corr = solve_corrector(layer, potential)
        x = layer.grid
        sel = (np.abs(x) >= 1) & (np.abs(x) <= spec.extent / 2)
        xs = x[sel]
        h = (xs > 0).astype(float)
        k1 = float(np.max(xs**2 * np.abs(layer.u_values[sel] - h + 1 / (layer.alpha * np.pi * xs))))
        k3 = float(np.max(xs**2 * np.abs(corr.psi_values[sel] - corr.k2 / xs)))
        out[tag] = {"extent": spec.extent, "K1": k1, "K2": corr.k2, "K3": k3,
                    "psi_end": float(max(abs(corr.psi_values[0]), abs(corr.psi_values[-1]))),
                    "corrector_residual": corr.residual, "coeff1": layer.tail_coefficient}

    def stable(a, b):
        return bool(b <= 2 * a + 1e-12 and a <= 2 * b + 1e-12)

    out["K1_stable"] = stable(out["X"]["K1"], out["2X"]["K1"])
    out["K3_stable"] = stable(out["X"]["K3"], out["2X"]["K3"])
    return out


# ---------------------------------------------------------------------------
# convergence sweep


@dataclass(frozen=True)
class Scenario:
    """Phase-field versus particle comparison.

    ``probe_times`` get individual tracking errors, which are not subject
    to the collision windows (those only exclude samples from the
    trajectory-error maximum); ``plateau_time`` is the time of the plateau
    comparison; the survivor count and error use the samples after
    ``survivor_after`` (default: last collision plus one window);
    ``time_refinement`` divides the default step ``0.2 eps**2 / max|W''|``.
    """

    name: str
    centers: tuple[float, ...]
    orientations: tuple[int, ...]
    t_end: float = 0.4
    sample_dt: float = 0.01
    perturbation_amp: float = 0.0
    probe_times: tuple[float, ...] = (0.2,)
    plateau_time: float | None = None
    window_factor: float = 5.0
    survivor_after: float | None = None
    dx_factor: float = 1 / 32
    time_refinement: int = 32

    @classmethod
    def canonical(cls, name: str) -> "Scenario":
        if name == "single":
            return cls("single", (0.0,), (1,), t_end=0.4, probe_times=(0.2,))
        if name == "pair":
            return cls("pair", (-0.5, 0.5), (1, -1), t_end=0.4, probe_times=(0.2,), plateau_time=0.35,
                       survivor_after=0.3)
        if name == "triple":
            return cls("triple", (-0.5, 0.0, 0.5), (1, -1, 1), t_end=0.4, probe_times=(0.2, 0.35),
                       plateau_time=0.35, survivor_after=0.3)
        raise ValueError(f"unknown scenario {name!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class ConvergenceReport:
    scenario: dict
    epsilons: list[float]
    trajectory_error: list[float]
    collision_time: list[float]
    plateau_error: list[float]
    probe_errors: dict[str, list[float]]
    crossings_after_collisions: list[int]
    survivor_error: list[float]
    reference_collision_times: list[float]
    series: list[dict] = field(default_factory=list)
    settings: list[dict] = field(default_factory=list)
    runtimes: list[float] = field(default_factory=list)

    def columns(self) -> list[str]:
        return (["epsilon", "trajectory_error", "collision_time", "plateau_error", "survivor_error",
                 "crossings_after_collisions"] + [f"error_t{k}" for k in self.probe_errors])

    def row(self, i: int) -> list:
        return ([self.epsilons[i], self.trajectory_error[i], self.collision_time[i], self.plateau_error[i],
                 self.survivor_error[i], self.crossings_after_collisions[i]]
                + [v[i] for v in self.probe_errors.values()])


def _sweep_threads(n: int) -> int:
    raw = os.environ.get(THREADS_ENV, "")
    if raw.strip():
        try:
            k = int(raw)
        except ValueError as exc:
            raise ValueError(f"{THREADS_ENV} must be an integer") from exc
        return max(1, k)
    return max(1, min(n, os.cpu_count() or 1))


def _one_epsilon(scn: Scenario, eps: float, potential: Potential, layer: LayerProfile,
                 ref: TrajectoryRecord) -> dict:
    t0 = _time.perf_counter()
    spec = InitialDataSpec.with_sine_perturbation(scn.centers, scn.orientations, scn.perturbation_amp * eps)
    state = build_initial(spec, layer, eps, potential, dx=eps * scn.dx_factor)
    dt = default_dt(eps, potential) / scn.time_refinement
    track, snaps = run(state, scn.t_end, scn.sample_dt, potential, dt=dt, snapshot_every=1)
    times = np.array(track.times)
    P = track.position_array()
    window = scn.window_factor * eps
    t_events = [e.time for e in ref.events]

    def in_window(t):
        return any(abs(t - T) <= window for T in t_events)

    # raw error at every sample; NaN where crossing and particle counts differ
    errs = np.full(times.size, np.nan)
    for k, t in enumerate(times):
        xs = np.sort(P[np.isfinite(P[:, k]), k])
        pr, al = ref.state_at(t)
        ps = np.sort(pr[al])
        if xs.size == ps.size:
            errs[k] = float(np.max(np.abs(xs - ps))) if xs.size else 0.0
        elif not in_window(t):
            raise AnalysisError(f"tracking failure at t={t:.4g}, eps={eps}: {xs.size} crossings, "
                                f"{ps.size} particles")
    outside = np.array([not in_window(t) for t in times], dtype=bool)
    traj = float(np.max(errs[outside])) if np.any(outside) else float("nan")
    probes = {}
    for tp in scn.probe_times:
        k = int(np.argmin(np.abs(times - tp)))
        probes[repr(float(tp))] = float(errs[k]) if np.isfinite(errs[k]) else float("inf")
    ann = [a for a in track.annihilated_at if a is not None]
    t_col = float(min(ann)) if ann else float("nan")
    plateau = float("nan")
    if scn.plateau_time is not None:
        ts = scn.plateau_time
        snap = min(snaps, key=lambda s: abs(s[0] - ts))
        pr, al = ref.state_at(ts)
        x = state.grid
        v_ref = step_function(ref, ts, x)
        keep = np.ones(x.size, dtype=bool)
        for p in pr[al]:
            keep &= np.abs(x - p) > window
        plateau = float(np.max(np.abs(snap[1][keep] - v_ref[keep])))
    if scn.survivor_after is not None:
        t_after = scn.survivor_after
    else:
        t_after = (max(t_events) + window) if t_events else 0.0
    after = [k for k in range(times.size) if times[k] > t_after]
    if after:
        counts = {int(np.sum(np.isfinite(P[:, k]))) for k in after}
        n_after = counts.pop() if len(counts) == 1 else -1
        surv = float(np.max(errs[after])) if np.all(np.isfinite(errs[after])) else float("inf")
    else:
        n_after, surv = -1, float("nan")
    series = {"t": times.tolist(), "tracked": [sorted(P[np.isfinite(P[:, k]), k].tolist()) for k in range(times.size)],
              "reference": [sorted(ref.state_at(t)[0][ref.state_at(t)[1]].tolist()) for t in times]}
    return {"epsilon": eps, "trajectory_error": traj, "collision_time": t_col, "plateau_error": plateau,
            "probes": probes, "crossings_after": n_after, "survivor_error": surv, "series": series,
            "settings": {"dx": state.dx, "dt": dt, "half_width": state.half_width, "nodes": int(state.grid.size)},
            "runtime": _time.perf_counter() - t0}


def convergence_sweep(scenario: Scenario, epsilon_list: Sequence[float], potential: Potential,
                      layer: LayerProfile, threads: int | None = None) -> ConvergenceReport:
    """Run the particle reference once and the phase field for each ``eps``.

    The per-epsilon runs execute on a thread pool (size from
    ``PNDYNAMICS_THREADS`` unless given) and are merged in epsilon order.
    """
    eps = [float(e) for e in epsilon_list]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon list must be strictly decreasing")
    if any(e <= 0 for e in eps):
        raise ValueError("epsilons must be positive")
    late = [t for t in (*scenario.probe_times, scenario.plateau_time, scenario.survivor_after)
            if t is not None and t > scenario.t_end]
    if late:
        raise ValueError(f"probe/plateau/survivor times {late} exceed t_end={scenario.t_end}")
    ref_state = ParticleState.create(scenario.centers, scenario.orientations,
                                     mobility=interaction_mobility(layer))
    ref = evolve(ref_state, scenario.t_end)
    n = threads if threads is not None else _sweep_threads(len(eps))
    if n > 1 and len(eps) > 1:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(lambda e: _one_epsilon(scenario, e, potential, layer, ref), eps))
    else:
        results = [_one_epsilon(scenario, e, potential, layer, ref) for e in eps]
    probe_keys = [repr(float(t)) for t in scenario.probe_times]
    return ConvergenceReport(
        scenario=scenario.to_dict(),
        epsilons=eps,
        trajectory_error=[r["trajectory_error"] for r in results],
        collision_time=[r["collision_time"] for r in results],
        plateau_error=[r["plateau_error"] for r in results],
        probe_errors={k: [r["probes"][k] for r in results] for k in probe_keys},
        crossings_after_collisions=[r["crossings_after"] for r in results],
        survivor_error=[r["survivor_error"] for r in results],
        reference_collision_times=[e.time for e in ref.events],
        series=[r["series"] for r in results],
        settings=[r["settings"] for r in results],
        runtimes=[r["runtime"] for r in results],
    )


def _f(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return "%.17g" % float(v)


def emit_report(report: ConvergenceReport, out_dir, include_runtimes: bool = False) -> dict:
    """Write ``report.csv``, ``report.json`` and ``series_<k>.csv`` per epsilon.

    Runtimes are left out of the files unless requested so that repeated
    runs produce identical bytes.  Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "report.csv", "meta": out / "report.json", "series": []}
    with open(paths["table"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.columns())
        for i in range(len(report.epsilons)):
            w.writerow([_f(v) for v in report.row(i)])
    meta = {"scenario": report.scenario, "epsilons": [_f(e) for e in report.epsilons],
            "reference_collision_times": [_f(t) for t in report.reference_collision_times],
            "settings": [{k: _f(v) for k, v in s.items()} for s in report.settings]}
    if include_runtimes:
        meta["runtimes"] = [_f(t) for t in report.runtimes]
    with open(paths["meta"], "w", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for i, s in enumerate(report.series):
        p = out / f"series_{i}.csv"
        paths["series"].append(p)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tracked", "reference"])
            for t, a, b in zip(s["t"], s["tracked"], s["reference"]):
                w.writerow([_f(t), " ".join(_f(v) for v in a), " ".join(_f(v) for v in b)])
    return paths


def read_report_table(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]
