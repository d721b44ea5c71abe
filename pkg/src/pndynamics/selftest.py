"""Quick self test built from the elementary identities of each module.

Every check is cheap (coarse layer grids, tiny runs) and exact up to
round-off or a stated tail error.  ``run_suite`` returns one
``(name, passed, detail)`` row per check.
"""
from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Callable

import numpy as np

from .analysis import (ConvergenceReport, check_dipole_removal, check_patching_inequality,
                       emit_report, evaluate_supersolution, make_supersolution,
                       perturbation_stability_check, read_report_table, residual_grid,
                       supersolution_residual)
from .halflaplacian import FarFieldModel, PVQuadrature, SampledFunction, apply_spectral, cross_validate
from .particles import ParticleState, evolve, rhs, step_function, upper_envelope
from .phasefield import InitialDataSpec, build_initial, default_dt, step, track_transitions
from .potential import Potential, builtin_sine, from_fourier, scale, validate
from .profiles import (GridSpec, oriented_corrector, oriented_layer, rescale_to_unit_mobility,
                       solve_corrector, solve_layer)

COARSE = GridSpec(h0=0.04, ratio=1.1, extent=100.0)


class _Fixtures:
    """Layers shared by the checks, solved lazily."""

    def __init__(self):
        self._cache = {}

    def _get(self, key, make):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @property
    def sine(self) -> Potential:
        return builtin_sine()

    @property
    def layer(self):
        return self._get("layer", lambda: solve_layer(self.sine, COARSE))

    @property
    def unit(self):
        return self._get("unit", lambda: scale(self.sine, self.layer.c0))

    @property
    def unit_layer(self):
        return self._get("unit_layer", lambda: solve_layer(self.unit, COARSE))

    @property
    def asym(self):
        def make():
            raw = from_fourier(0.65, (-0.5, -0.15), (0.1, -0.05), name="asym")
            pot = scale(raw, solve_layer(raw, COARSE).c0)
            lay = solve_layer(pot, COARSE)
            return pot, lay, solve_corrector(lay, pot)
        return self._get("asym", make)


def _checks(fx: _Fixtures) -> list[tuple[str, Callable[[], tuple[bool, float]]]]:
    sine = fx.sine

    def w_half():
        r = abs(float(sine(0.5)) - 1.0)
        return r <= 1e-15, r

    def scale_identity():
        s = scale(sine, 1.0)
        v = np.linspace(-2, 2, 101)
        r = float(np.max(np.abs(s(v) - sine(v))))
        return r == 0.0, r

    def scale_structure():
        s = scale(sine, 3.7)
        v = np.linspace(0, 1, 101)
        r = max(abs(float(s(0.0))), float(np.max(np.abs(s(v + 1) - s(v)))))
        return r <= 1e-12, r

    def validate_sine():
        rep = validate(sine, 1024)
        return rep.passed, float(len(rep.failures()))

    def validate_parabola():
        p = Potential(lambda v: v**2, lambda v: 2 * v, lambda v: 2 + 0 * v, name="parabola")
        rep = validate(p)
        return not rep["periodicity"].passed, rep["periodicity"].residual

    def validate_negative():
        p = Potential(lambda v: -np.sin(np.pi * v) ** 2, lambda v: -np.pi * np.sin(2 * np.pi * v),
                      lambda v: -2 * np.pi**2 * np.cos(2 * np.pi * v), name="negative")
        rep = validate(p)
        return not rep["positive_on_unit_interval"].passed, rep["positive_on_unit_interval"].residual

    def spectral_constant():
        r = float(np.max(np.abs(apply_spectral(np.full(256, 2.5), 2 * np.pi))))
        return r <= 1e-12, r

    def quadrature_arctan_origin():
        grid = COARSE.nodes(1.0)
        f = SampledFunction(grid, np.arctan(grid), _arctan_tail())
        r = abs(float(PVQuadrature(grid, np.array([0.0]))(f)[0]))
        return r <= 1e-12, r

    def quadrature_constant():
        grid = COARSE.nodes(1.0)
        f = SampledFunction(grid, np.full(grid.size, 4.0), FarFieldModel(4.0, 4.0))
        r = float(np.max(np.abs(PVQuadrature(grid, grid[10:-10:7])(f))))
        return r <= 1e-10, r

    def cross_validate_constant():
        # both routes cancel exactly up to round-off in the kernel sums
        cv = cross_validate(lambda x: np.full(x.shape, 1.5), 1e-10)
        return cv.passed, cv.discrepancy

    def unit_fixed_point():
        pot, eps_hat = rescale_to_unit_mobility(fx.unit, 0.1, layer=fx.unit_layer)
        r = max(abs(eps_hat - 0.1), abs(pot.alpha - fx.unit.alpha))
        return r <= 1e-3 * 0.1, r

    def unit_idempotent():
        p1, e1 = rescale_to_unit_mobility(sine, 0.1, layer=fx.layer)
        p2, e2 = rescale_to_unit_mobility(p1, e1, grid_spec=COARSE)
        r = max(abs(e2 - e1), abs(p2.alpha - p1.alpha) / p1.alpha)
        return r <= 1e-3 * 0.1, r

    def corrector_residual():
        _, _, corr = fx.asym
        return corr.residual <= 1e-6, corr.residual

    def oriented_layer_identity():
        x = np.linspace(-5, 5, 41)
        lay = fx.layer
        r = float(np.max(np.abs(oriented_layer(x, -1, lay) + 1 - oriented_layer(-x, 1, lay))))
        return r <= 1e-12, r

    def oriented_corrector_plus():
        _, _, corr = fx.asym
        x = np.linspace(-5, 5, 41)
        r = float(np.max(np.abs(oriented_corrector(x, 1, corr) - corr(x))))
        return r == 0.0, r

    def oriented_corrector_origin():
        _, _, corr = fx.asym
        r = abs(float(oriented_corrector(0.0, -1, corr)) + float(corr(0.0)))
        return r <= 1e-15, r

    def rhs_single():
        v1 = float(rhs(ParticleState.create([0.3], [-1], external_force=0.7))[0])
        v0 = float(rhs(ParticleState.create([0.3], [1]))[0])
        r = abs(v1 - 0.7) + abs(v0)
        return r <= 1e-15, r

    def step_single():
        rec = evolve(ParticleState.create([0.0], [1]), 1.0)
        v = step_function(rec, 0.5, [1.0, -1.0])
        return list(v) == [1, 0], 0.0

    def step_pair():
        rec = evolve(ParticleState.create([0.0, 1.0], [1, 1]), 0.1)
        v = step_function(rec, 0.05, [2.0])
        return int(v[0]) == 2, 0.0

    def envelope_generic():
        rec = evolve(ParticleState.create([-0.5, 0.5], [1, -1]), 0.5)
        x = np.array([-2.0, -0.1, 0.1, 2.0])
        r = float(np.max(np.abs(upper_envelope(rec, 0.1, x) - step_function(rec, 0.1, x))))
        return r == 0.0, r

    def pde_integer_constant():
        base = build_initial(InitialDataSpec((0.0,), (1,)), fx.unit_layer, 0.2, fx.unit, dx=0.2 / 8)
        worst = 0.0
        for k in (0, 1, -2):
            n = base.grid.size
            st = replace(base, values=np.full(n, float(k)), background=np.full(n, float(k)),
                         background_operator=np.zeros(n))
            out = step(st, default_dt(0.2, fx.unit), fx.unit)
            worst = max(worst, float(np.max(np.abs(out.values - k))))
        return worst <= 1e-12, worst

    def track_single_layer():
        st = build_initial(InitialDataSpec((0.0,), (1,)), fx.unit_layer, 0.05, fx.unit, dx=0.05 / 8)
        cr = track_transitions(st)
        ok = len(cr) == 1 and cr[0].level == 0.5 and cr[0].direction == 1
        r = abs(cr[0].position) if cr else np.inf
        return ok and r <= 1e-3 * 0.05, r

    def supersolution_centre():
        eps = 0.01
        spec = make_supersolution([0.0], [1], fx.unit_layer, eps, 0.0, 0.0)
        _, _, corr = fx.asym
        r = abs(float(evaluate_supersolution(spec, 0.0, [0.0], fx.unit_layer, corr)[0]) - 0.5)
        return r <= 1e-12, r

    def supersolution_far_left():
        eps, sig, dlt = 0.01, 0.05, 0.01
        spec = make_supersolution([0.0], [1], fx.unit_layer, eps, sig, dlt)
        _, _, corr = fx.asym
        lay = fx.unit_layer
        target = eps * (sig - dlt) / lay.alpha
        val = float(evaluate_supersolution(spec, 0.0, [-0.9], lay, corr)[0])
        tail = abs(float(lay(-0.9 / eps)))
        r = abs(val - target)
        return r <= tail + 1e-3 * eps, r

    def supersolution_exact_layer():
        # coarse grid: the quadrature error grows like 1/eps, so use eps = 0.1
        eps = 0.1
        _, _, corr = fx.asym
        lay, pot = fx.unit_layer, fx.unit
        spec = make_supersolution([0.0], [1], lay, eps, 0.0, 0.0)
        r = abs(supersolution_residual(spec, 0.0, residual_grid([0.0], eps), pot, lay, corr))
        return r <= 1e-6, r

    def patching_zero():
        _, lay, corr = fx.asym
        eps, th = 1e-2, 1e-2**0.4
        slack, k = check_patching_inequality(0.0, 0.0, eps, th, th / eps, lay, corr)
        return k == 0.0 and slack >= 0.0, k

    def dipole_far():
        _, lay, corr = fx.asym
        y = np.array([-1e6, 1e6])
        z = 10.0
        lhs = oriented_layer(y + z, -1, lay) + oriented_layer(y, 1, lay)
        r = float(np.max(np.abs(lhs)))
        return r <= 1e-5, r

    def dipole_runs():
        _, lay, corr = fx.asym
        eps, th = 1e-2, 1e-2**0.4
        mx, k = check_dipole_removal(0.0, 0.0, eps, th, th / eps, lay, corr)
        return np.isfinite(k), k

    def stability_identical():
        rep = perturbation_stability_check(ParticleState.create([-0.5, 0.5], [1, -1]), [0.0], [0.0])
        row = rep["rows"][0]
        r = row["sup_distance"] + row["collision_time_gap"] + row["collision_point_gap"]
        return r == 0.0, r

    def report_empty():
        rep = ConvergenceReport({}, [], [], [], [], {}, [], [], [])
        with tempfile.TemporaryDirectory() as d:
            paths = emit_report(rep, d)
            text = Path(paths["table"]).read_text()
        return text.count("\n") == 1, 0.0

    def report_one_row():
        rep = ConvergenceReport({"name": "x"}, [0.1], [1e-3], [0.25], [2e-3], {"0.2": [1e-3]}, [0], [0.0],
                                [0.25], [{"t": [0.0], "tracked": [[0.1]], "reference": [[0.1]]}],
                                [{"dx": 0.1 / 32}])
        with tempfile.TemporaryDirectory() as d:
            paths = emit_report(rep, d)
            header, rows = read_report_table(paths["table"])
        return len(rows) == 1 and rows[0] == [float(v) for v in rep.row(0)], 0.0

    def report_round_trip():
        vals = [0.1, 1 / 3, np.pi * 1e-7, 2.0**-40, 12345.678901234567]
        rep = ConvergenceReport({}, vals, vals, vals, vals, {}, [0] * 5, vals, vals)
        with tempfile.TemporaryDirectory() as d:
            _, rows = read_report_table(emit_report(rep, d)["table"])
        return all(r[0] == v for r, v in zip(rows, vals)), 0.0

    return [
        ("W(1/2) = 1", w_half),
        ("scale by 1 is the identity", scale_identity),
        ("scaled sine keeps W(0) = 0 and period 1", scale_structure),
        ("sine potential validates", validate_sine),
        ("v**2 fails periodicity", validate_parabola),
        ("-sin**2 fails positivity", validate_negative),
        ("spectral operator of a constant is 0", spectral_constant),
        ("quadrature of arctan at 0 is 0", quadrature_arctan_origin),
        ("quadrature of a constant is 0", quadrature_constant),
        ("cross validation of a constant is exact", cross_validate_constant),
        ("unit potential is a rescaling fixed point", unit_fixed_point),
        ("rescaling is idempotent", unit_idempotent),
        ("corrector residual at most 1e-6", corrector_residual),
        ("oriented layer reflection identity", oriented_layer_identity),
        ("oriented corrector with b = +1", oriented_corrector_plus),
        ("oriented corrector at 0 with b = -1", oriented_corrector_origin),
        ("velocity of a lone particle", rhs_single),
        ("step function of one particle", step_single),
        ("step function of a (+,+) pair", step_pair),
        ("envelope equals step function off the particles", envelope_generic),
        ("integer constant field is steady", pde_integer_constant),
        ("single layer gives one up crossing at 0", track_single_layer),
        ("supersolution equals 1/2 at the particle", supersolution_centre),
        ("supersolution far-left offset", supersolution_far_left),
        ("supersolution residual of the exact layer", supersolution_exact_layer),
        ("patching with c = c' = 0 needs K = 0", patching_zero),
        ("dipole left side vanishes far out", dipole_far),
        ("dipole constant is finite", dipole_runs),
        ("identical systems have zero gaps", stability_identical),
        ("empty report is header only", report_empty),
        ("one epsilon gives one row", report_one_row),
        ("report round trip at 17 digits", report_round_trip),
    ]


def _arctan_tail():
    # arctan(x) = +-pi/2 - 1/x + O(x**-3)
    return FarFieldModel(-np.pi / 2, np.pi / 2, left_coeff1=-1.0, right_coeff1=-1.0)


def run_suite() -> list[tuple[str, bool, float]]:
    """Run every check; an exception counts as a failure."""
    fx = _Fixtures()
    rows = []
    for name, fn in _checks(fx):
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - reported as a failed row
            ok, detail = False, float("nan")
            name = f"{name} ({type(exc).__name__}: {exc})"
        rows.append((name, bool(ok), float(detail)))
    return rows
