"""Command line front end.

Subcommands: ``profile``, ``ode``, ``pde``, ``sweep``, ``verify`` and
``selftest``.  Parameters come from an INI file (``--config``, one section
per subcommand) and are overridden by flags.  Every run writes a JSON
manifest with the resolved configuration, library versions and wall time.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import platform
import re
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .analysis import (AnalysisError, Scenario, asymmetric_split_experiment, convergence_sweep,
                       emit_report, lemma_constants, make_supersolution, perturbation_stability_check,
                       residual_grid, supersolution_residual, tail_law_check)
from .halflaplacian import PVQuadrature
from .particles import IntegrationError, ParticleState, evolve, export_csv, export_events
from .phasefield import (InitialDataSpec, PhaseFieldError, build_initial, default_dt,
                         export_snapshot_binary, export_snapshot_csv, export_track_csv, run)
from .potential import Potential, builtin_sine, from_fourier, scale, validate
from .profiles import (ConvergenceError, GridSpec, export_profile, interaction_mobility,
                       solve_corrector, solve_layer)
from .selftest import run_suite

log = logging.getLogger("pndynamics")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2
# Fourier coefficients (a0, cos, sin) of a potential without reflection
# symmetry; its corrector is nonzero, unlike that of sin(pi v)**2
ASYMMETRIC = (0.65, (-0.5, -0.15), (0.1, -0.05))
NUMERICAL_ERRORS = (ConvergenceError, IntegrationError, PhaseFieldError, AnalysisError,
                    FloatingPointError, np.linalg.LinAlgError)


class ValidationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


# ---------------------------------------------------------------------------
# parameter parsing


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if not text:
        return []
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise ValidationError(f"not a comma separated list of numbers: {text!r}") from exc


def _signs(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        out = [int(v) for v in text]
    else:
        out = []
        for tok in str(text).split(","):
            tok = tok.strip()
            if tok in ("+", "+1", "1"):
                out.append(1)
            elif tok in ("-", "-1"):
                out.append(-1)
            else:
                raise ValidationError(f"orientation must be + or -, got {tok!r}")
    if any(b not in (1, -1) for b in out):
        raise ValidationError("orientations must be +1 or -1")
    return out


def _resolve(args: argparse.Namespace, section: str, defaults: dict) -> dict:
    """Merge defaults, config file section and explicit flags (in that order)."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise ValidationError(f"cannot read config file {args.config}")
        if cp.has_section(section):
            for k, v in cp.items(section):
                key = k.replace("-", "_")
                if key not in defaults:
                    raise ValidationError(f"unknown key {k!r} in section [{section}]")
                cfg[key] = v
    if getattr(args, "manifest", None):
        with open(args.manifest) as fh:
            m = json.load(fh)
        if m.get("subcommand") != section:
            raise ValidationError(f"manifest is for {m.get('subcommand')!r}, not {section!r}")
        cfg.update(m["config"])
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _potential(cfg: dict) -> Potential:
    kind = str(cfg.get("potential", "sine"))
    if kind == "sine":
        pot = builtin_sine()
    elif kind == "fourier":
        pot = from_fourier(float(cfg.get("a0", 0.0)), _floats(cfg.get("cos", "")), _floats(cfg.get("sin", "")))
    else:
        raise ValidationError(f"unknown potential {kind!r} (sine or fourier)")
    rep = validate(pot)
    if not rep.passed:
        raise ValidationError(f"potential fails: {', '.join(rep.failures())}")
    factor = float(cfg.get("potential_scale", 1.0))
    if not factor > 0:
        raise ValidationError("potential_scale must be positive")
    return scale(pot, factor)


def _calibrate(pot: Potential, mode: str, gs: GridSpec):
    """Return ``(potential, layer)`` after the requested rescaling."""
    layer = solve_layer(pot, gs)
    if mode == "none":
        return pot, layer
    if mode == "unit-mobility":
        f = layer.c0
    elif mode == "unit-interaction":
        f = interaction_mobility(layer)
    else:
        raise ValidationError(f"unknown rescale mode {mode!r}")
    pot = scale(pot, f)
    return pot, solve_layer(pot, gs)


def _grid(cfg) -> GridSpec:
    gs = GridSpec(float(cfg["h0"]), float(cfg["core"]), float(cfg["ratio"]), float(cfg["extent"]))
    if not (gs.h0 > 0 and gs.core > 0 and gs.ratio >= 1 and gs.extent > gs.core):
        raise ValidationError("invalid grid parameters")
    return gs


POTENTIAL_DEFAULTS = {"potential": "sine", "a0": "0", "cos": "", "sin": "", "potential_scale": "1"}
GRID_DEFAULTS = {"h0": "0.02", "core": "2", "ratio": "1.05", "extent": "200"}


def _add_potential_flags(p):
    p.add_argument("--potential", help="sine or fourier")
    p.add_argument("--a0", help="constant Fourier coefficient")
    p.add_argument("--cos", help="cosine coefficients, comma separated")
    p.add_argument("--sin", help="sine coefficients, comma separated")
    p.add_argument("--potential-scale", dest="potential_scale", help="multiply W by this factor")


def _add_grid_flags(p):
    p.add_argument("--h0", help="core spacing in units of 1/alpha")
    p.add_argument("--core", help="uniform core half width in units of 1/alpha")
    p.add_argument("--ratio", help="geometric stretching ratio")
    p.add_argument("--extent", help="grid half extent")


# ---------------------------------------------------------------------------
# subcommands


def cmd_profile(args, cfg) -> dict:
    pot = _potential(cfg)
    gs = _grid(cfg)
    pot, layer = _calibrate(pot, str(cfg["rescale"]), gs)
    corr = solve_corrector(layer, pot) if str(cfg["corrector"]).lower() in ("1", "true", "yes") else None
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    paths = list(export_profile(out, layer, corr, pot))
    if cfg.get("debug_weights"):
        q = PVQuadrature(layer.grid, layer.grid[3:-3])
        M = q.matrix()
        with open(cfg["debug_weights"], "w", newline="\n") as fh:
            fh.write("query," + ",".join("%.17g" % x for x in layer.grid) + "\n")
            for xq, row in zip(layer.grid[3:-3], M):
                fh.write("%.17g," % xq + ",".join("%.17g" % v for v in row) + "\n")
        paths.append(cfg["debug_weights"])
    print(f"c0 = {layer.c0:.10g}  alpha = {layer.alpha:.10g}  residual = {layer.residual:.2e}")
    if corr is not None:
        print(f"corrector: residual = {corr.residual:.2e}  K2 = {corr.k2:.6g}  drag = {corr.drag:.10g}")
    return {"outputs": [str(p) for p in paths]}


def cmd_ode(args, cfg) -> dict:
    pos = _floats(cfg["positions"])
    signs = _signs(cfg["signs"])
    n = int(cfg["n"]) if str(cfg["n"]).strip() else len(pos)
    if n != len(pos) or n != len(signs):
        raise ValidationError("--n, --positions and --signs disagree")
    c0 = float(cfg["c0"])
    t_end = float(cfg["t_end"])
    try:
        state = ParticleState.create(pos, signs, mobility=c0, external_force=float(cfg["sigma"]))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    if not t_end > 0:
        raise ValidationError("t_end must be positive")
    rec = evolve(state, t_end)
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    export_csv(rec, out / "trajectory.csv")
    export_events(rec, out / "events.json")
    for e in rec.events:
        surv = "none" if e.survivor is None else f"{e.survivor + 1} ({e.survivor_orientation:+d})"
        print(f"collision t={e.time:.10g} at x={e.location:.6g}: particles "
              f"{','.join(str(i + 1) for i in e.cluster)} survivor {surv}")
    if not rec.events:
        print("no collisions")
    return {"outputs": [str(out / "trajectory.csv"), str(out / "events.json")]}


def cmd_pde(args, cfg) -> dict:
    eps = float(cfg["epsilon"])
    centers = _floats(cfg["centers"])
    signs = _signs(cfg["signs"])
    if len(centers) != len(signs) or not centers:
        raise ValidationError("centers and signs must be non-empty and of equal length")
    if not eps > 0:
        raise ValidationError("epsilon must be positive")
    pot, layer = _calibrate(_potential(cfg), str(cfg["rescale"]), _grid(cfg))
    try:
        spec = InitialDataSpec.with_sine_perturbation(centers, signs, float(cfg["perturbation_amp"]))
        dx = float(cfg["dx"]) if str(cfg["dx"]).strip() else None
        state = build_initial(spec, layer, eps, pot, dx=dx)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    dt = default_dt(eps, pot) / int(cfg["time_refinement"])
    every = int(cfg["snapshot_every"])
    track, snaps = run(state, float(cfg["t_end"]), float(cfg["sample_dt"]), pot, dt=dt,
                       snapshot_every=every)
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "track.csv"]
    export_track_csv(track, outputs[0])
    fmt = str(cfg["format"])
    for k, (t, v) in enumerate(snaps):
        if fmt == "csv":
            p = out / f"snapshot_{k:05d}.csv"
            export_snapshot_csv(state.grid, v, p)
        elif fmt == "binary":
            p = out / f"snapshot_{k:05d}.bin"
            export_snapshot_binary(state, p, values=v, time=t)
        else:
            raise ValidationError("format must be csv or binary")
        outputs.append(p)
    alive = track.alive_at(len(track.times) - 1)
    print(f"t = {track.times[-1]:.6g}: {len(alive)} transition(s) at "
          + ", ".join(f"{track.position_array()[i, -1]:.6g}" for i in alive))
    return {"outputs": [str(p) for p in outputs]}


def cmd_sweep(args, cfg) -> dict:
    eps = _floats(cfg["epsilons"])
    if cfg["scenario"] in ("single", "pair", "triple") and not str(cfg["centers"]).strip():
        scn = Scenario.canonical(cfg["scenario"])
    else:
        scn = Scenario(str(cfg["scenario"]), tuple(_floats(cfg["centers"])), tuple(_signs(cfg["signs"])))
    updates = {}
    for key, conv in (("t_end", float), ("sample_dt", float), ("perturbation_amp", float),
                      ("window_factor", float), ("time_refinement", int), ("dx_factor", float)):
        if str(cfg[key]).strip():
            updates[key] = conv(cfg[key])
    if str(cfg["probe_times"]).strip():
        updates["probe_times"] = tuple(_floats(cfg["probe_times"]))
    for key in ("plateau_time", "survivor_after"):
        if str(cfg[key]).strip():
            updates[key] = float(cfg[key])
    scn = Scenario(**{**scn.to_dict(), **updates})
    pot, layer = _calibrate(_potential(cfg), str(cfg["rescale"]), _grid(cfg))
    try:
        report = convergence_sweep(scn, eps, pot, layer)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    paths = emit_report(report, cfg["out_dir"])
    for i in range(len(report.epsilons)):
        print("  ".join(f"{c}={v:.6g}" for c, v in zip(report.columns(), report.row(i))))
    return {"outputs": [str(paths["table"]), str(paths["meta"])] + [str(p) for p in paths["series"]],
            "runtimes": report.runtimes}


def _verify_checks() -> list[tuple[str, bool, str]]:
    rows = []
    sine = builtin_sine()
    gs = GridSpec()
    layer = solve_layer(sine, gs)
    rows.append(("mobility of sin^2 equals 1/pi", abs(layer.c0 * np.pi - 1) <= 1e-3, f"c0={layer.c0:.10g}"))
    rows.append(("tail coefficient 1/(2 pi^3)", abs(layer.tail_coefficient * 2 * np.pi**3 - 1) <= 0.05,
                 f"{layer.tail_coefficient:.6g}"))
    raw = from_fourier(*ASYMMETRIC, name="asym")
    asym = scale(raw, solve_layer(raw, gs).c0)
    al = solve_layer(asym, gs)
    ac = solve_corrector(al, asym)
    rows.append(("corrector residual", ac.residual <= 1e-6, f"{ac.residual:.2e}  K2={ac.k2:.4g}"))
    tl = tail_law_check(asym, gs)
    rows.append(("layer tail law stable under doubling", tl["K1_stable"],
                 f"K1={tl['X']['K1']:.4g} -> {tl['2X']['K1']:.4g}"))
    eps = 0.01
    spec = make_supersolution([0.0], [1], al, eps, 0.0, 0.0)
    r = supersolution_residual(spec, 0.0, residual_grid([0.0], eps), asym, al, ac)
    rows.append(("supersolution residual of the exact layer", abs(r) <= 1e-6, f"{r:.2e}"))
    spec = make_supersolution([-0.5, 0.5], [1, 1], al, eps, 0.06, 0.01)
    r = supersolution_residual(spec, 0.0, residual_grid([-0.5, 0.5], eps), asym, al, ac)
    rows.append(("supersolution residual, repulsive pair", r >= -1e-4, f"{r:.3e}"))
    lc = lemma_constants(al, ac)
    rows.append(("patching constant bounded", lc["patching_K_bounded"] and lc["min_slack"] >= 0,
                 ", ".join(f"{row['patching_K']:.3g}" for row in lc["rows"])))
    rows.append(("dipole constant bounded", lc["dipole_K_bounded"],
                 ", ".join(f"{row['dipole_K']:.3g}" for row in lc["rows"])))
    for Theta in (1e-2, 5e-3):
        rep = asymmetric_split_experiment(ParticleState.create([-Theta / 2, Theta / 2], [1, -1]), Theta, 26.0)
        rows.append((f"asymmetric split L=26 Theta={Theta:g}", rep["passed"],
                     f"gain={rep['gain_over_Theta']:.3f} Theta"))
    rep = asymmetric_split_experiment(ParticleState.create([-5e-4, 5e-4], [1, -1]), 1e-3, 2.0)
    rows.append(("asymmetric split L=2 fails check (c)", not rep["checks"]["c_crosses_partner_position"],
                 f"gain={rep['gain_over_Theta']:.3f} Theta"))
    ps = perturbation_stability_check(ParticleState.create([-0.5, 0.5], [1, -1]), [1e-2, 1e-3, 1e-4], [0, 0, 0])
    rows.append(("perturbation stability", ps["passed"],
                 ", ".join(f"{row['collision_time_gap']:.2e}" for row in ps["rows"])))
    return rows


def cmd_verify(args, cfg) -> dict:
    rows = _verify_checks()
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail}")
    failed = [r[0] for r in rows if not r[1]]
    return {"checks": {r[0]: bool(r[1]) for r in rows}, "exit": EXIT_NUMERICAL if failed else EXIT_OK}


def cmd_selftest(args, cfg) -> dict:
    rows = run_suite()
    width = max(len(r[0]) for r in rows)
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<{width}}  {detail:.3g}")
    failed = [r[0] for r in rows if not r[1]]
    return {"checks": {r[0]: bool(r[1]) for r in rows}, "exit": EXIT_NUMERICAL if failed else EXIT_OK}


# ---------------------------------------------------------------------------
# dispatch


SUBCOMMANDS = {
    "profile": (cmd_profile, {**POTENTIAL_DEFAULTS, **GRID_DEFAULTS, "rescale": "none", "corrector": "false",
                              "out": "profile", "debug_weights": ""}),
    "ode": (cmd_ode, {"n": "", "positions": "-0.5,0.5", "signs": "+,-", "c0": "1", "sigma": "0",
                      "t_end": "1", "out": "ode_out"}),
    "pde": (cmd_pde, {**POTENTIAL_DEFAULTS, **GRID_DEFAULTS, "rescale": "unit-interaction", "epsilon": "0.1",
                      "centers": "-0.5,0.5", "signs": "+,-", "perturbation_amp": "0", "t_end": "0.4",
                      "dx": "", "sample_dt": "0.01", "snapshot_every": "10", "time_refinement": "1",
                      "format": "csv", "out_dir": "pde_out"}),
    "sweep": (cmd_sweep, {**POTENTIAL_DEFAULTS, **GRID_DEFAULTS, "rescale": "unit-interaction",
                          "scenario": "pair", "centers": "", "signs": "", "epsilons": "0.2,0.1,0.05",
                          "t_end": "", "sample_dt": "", "perturbation_amp": "", "window_factor": "",
                          "time_refinement": "", "dx_factor": "", "probe_times": "", "plateau_time": "",
                          "survivor_after": "",
                          "out_dir": "sweep_out"}),
    "verify": (cmd_verify, {}),
    "selftest": (cmd_selftest, {}),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pndynamics", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="subcommand", parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="INI file; section named after the subcommand")
        sp.add_argument("--manifest", help="re-run with the configuration stored in a manifest")
        sp.add_argument("--manifest-out", dest="manifest_out", help="manifest path")

    sp = sub.add_parser("profile", help="layer (and corrector) profile")
    common(sp)
    _add_potential_flags(sp)
    _add_grid_flags(sp)
    sp.add_argument("--rescale", help="none, unit-mobility or unit-interaction")
    sp.add_argument("--corrector", help="also solve the corrector (true/false)")
    sp.add_argument("--out", help="output stem for .csv and .json")
    sp.add_argument("--debug-weights", dest="debug_weights", help="write the quadrature matrix to this CSV")

    sp = sub.add_parser("ode", help="particle system with annihilation")
    common(sp)
    sp.add_argument("--n")
    sp.add_argument("--positions")
    sp.add_argument("--signs")
    sp.add_argument("--c0")
    sp.add_argument("--sigma")
    sp.add_argument("--t-end", dest="t_end")
    sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("pde", help="phase-field run with tracking")
    common(sp)
    _add_potential_flags(sp)
    _add_grid_flags(sp)
    sp.add_argument("--rescale")
    sp.add_argument("--epsilon")
    sp.add_argument("--centers")
    sp.add_argument("--signs")
    sp.add_argument("--perturbation-amp", dest="perturbation_amp")
    sp.add_argument("--t-end", dest="t_end")
    sp.add_argument("--dx")
    sp.add_argument("--sample-dt", dest="sample_dt")
    sp.add_argument("--snapshot-every", dest="snapshot_every")
    sp.add_argument("--time-refinement", dest="time_refinement")
    sp.add_argument("--format")
    sp.add_argument("--out-dir", dest="out_dir")

    sp = sub.add_parser("sweep", help="convergence sweep over epsilon")
    common(sp)
    _add_potential_flags(sp)
    _add_grid_flags(sp)
    sp.add_argument("--rescale")
    sp.add_argument("--scenario", help="single, pair, triple or a custom name with --centers/--signs")
    sp.add_argument("--centers")
    sp.add_argument("--signs")
    sp.add_argument("--epsilons")
    for key in ("t_end", "sample_dt", "perturbation_amp", "window_factor", "time_refinement", "dx_factor",
                "probe_times", "plateau_time", "survivor_after"):
        sp.add_argument("--" + key.replace("_", "-"), dest=key)
    sp.add_argument("--out-dir", dest="out_dir")

    for name, text in (("verify", "lemma checks"), ("selftest", "quick self test")):
        sp = sub.add_parser(name, help=text)
        common(sp)
    return p


def _versions() -> dict:
    return {"pndynamics": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


_NEGATIVE = re.compile(r"^-\.?\d")


def _join_negative_values(argv: list[str]) -> list[str]:
    """Turn ``--opt -0.5,0.5`` into ``--opt=-0.5,0.5`` so argparse accepts it."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if (tok.startswith("--") and "=" not in tok and i + 1 < len(argv)
                and _NEGATIVE.match(argv[i + 1])):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
        else:
            out.append(tok)
            i += 1
    return out


def main(argv=None) -> int:
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ValidationError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    func, defaults = SUBCOMMANDS[args.subcommand]
    t0 = time.perf_counter()
    code = EXIT_OK
    info: dict = {}
    try:
        cfg = _resolve(args, args.subcommand, defaults)
        with np.errstate(invalid="ignore", divide="ignore"):
            info = func(args, cfg) or {}
        code = info.pop("exit", EXIT_OK)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
        cfg = locals().get("cfg", {})
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    manifest = {"subcommand": args.subcommand, "config": cfg, "versions": _versions(),
                "wall_time": time.perf_counter() - t0, "exit_code": code, **info}
    path = args.manifest_out or _default_manifest(args.subcommand, cfg)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return code


def _default_manifest(sub: str, cfg: dict) -> str:
    if sub in ("ode",):
        return str(Path(cfg.get("out", ".")) / "manifest.json")
    if sub in ("pde", "sweep"):
        return str(Path(cfg.get("out_dir", ".")) / "manifest.json")
    if sub == "profile":
        return str(cfg.get("out", "profile")) + ".manifest.json"
    return f"{sub}.manifest.json"


if __name__ == "__main__":
    sys.exit(main())
