"""Layer solution, corrector and mobility.

The layer ``u`` solves ``I[u] = W'(u)`` with ``u(-inf) = 0``,
``u(+inf) = 1``, ``u(0) = 1/2`` and ``u' > 0``.  The corrector ``psi``
solves the linearised problem

    I[psi] = W''(u) psi + (W''(u) - alpha)/alpha + eta u'

with ``psi -> 0`` at infinity.  A decaying solution exists only for
``eta = c0``, the mobility; the solver treats ``eta`` as an unknown fixed
by the orthogonality ``int psi u' = 0``, so that the computed ``eta`` is
the discrete counterpart of ``c0``.  The equation is posed with
``eta = 1``, which is consistent only for a potential with unit mobility
(see :func:`rescale_to_unit_mobility`); the reported residual uses
``eta = 1`` and ``CorrectorProfile.drag`` holds the computed value.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import make_interp_spline

from .halflaplacian import FarFieldModel, PVQuadrature, graded_grid
from .potential import Potential, scale, validate

__all__ = [
    "GridSpec",
    "LayerProfile",
    "CorrectorProfile",
    "ConvergenceError",
    "solve_layer",
    "solve_corrector",
    "mobility",
    "rescale_to_unit_mobility",
    "interaction_mobility",
    "rescale_to_unit_interaction",
    "OperatorEvaluator",
    "layer_operator",
    "corrector_operator",
    "export_profile",
    "import_profile",
    "oriented_layer",
    "oriented_corrector",
]

log = logging.getLogger(__name__)

N_PIN = 3  # end nodes tied to the tail model on each side


class ConvergenceError(RuntimeError):
    """Raised when a nonlinear or linear profile solve fails."""


@dataclass(frozen=True)
class GridSpec:
    """Graded symmetric grid: uniform core, geometric stretching outward.

    ``h0`` and ``core`` are measured in layer widths ``1/alpha`` when
    ``scaled`` is true; ``extent`` is always in physical units.
    """

    h0: float = 0.02
    core: float = 2.0
    ratio: float = 1.05
    extent: float = 200.0
    scaled: bool = True

    def nodes(self, alpha: float) -> np.ndarray:
        unit = 1.0 / alpha if self.scaled else 1.0
        return graded_grid(self.h0 * unit, self.core * unit, self.ratio, self.extent)

    def refined(self) -> "GridSpec":
        return replace(self, h0=self.h0 / 2, ratio=1.0 + (self.ratio - 1.0) / 2)

    def with_extent(self, extent: float) -> "GridSpec":
        return replace(self, extent=float(extent))


def _heaviside(x):
    return (np.asarray(x) > 0).astype(float)


class _Interp:
    """Spline inside the grid, tail model outside."""

    def __init__(self, nodes, values, tail: FarFieldModel):
        self._spl = make_interp_spline(nodes, values, k=5)
        self._d = self._spl.derivative()
        self._lo, self._hi = nodes[0], nodes[-1]
        self._tail = tail

    def __call__(self, x, nu: int = 0):
        x = np.asarray(x, dtype=float)
        inside = (x >= self._lo) & (x <= self._hi)
        xi = np.where(inside, x, 0.0)
        xo = np.where(inside, 1.0, x)
        if nu == 0:
            return np.where(inside, self._spl(xi), self._tail(xo))
        return np.where(inside, self._d(xi), self._tail.derivative(xo))


@dataclass(frozen=True, eq=False)
class LayerProfile:
    """Sampled layer with tails, mobility and fitted tail constants."""

    grid: np.ndarray
    u_values: np.ndarray
    u_prime_values: np.ndarray
    tail: FarFieldModel
    c0: float
    alpha: float
    k1: float
    fitted_coeff1: tuple[float, float]
    residual: float
    potential_name: str = "custom"
    _interp: _Interp | None = field(default=None, repr=False)

    def __post_init__(self):
        if self._interp is None:
            object.__setattr__(self, "_interp", _Interp(self.grid, self.u_values, self.tail))

    def __call__(self, x):
        return self._interp(x)

    def derivative(self, x):
        return self._interp(x, 1)

    @property
    def tail_coefficient(self) -> float:
        """Magnitude of the fitted ``1/x`` tail coefficient (mean of both sides)."""
        return float(-0.5 * (self.fitted_coeff1[0] + self.fitted_coeff1[1]))


@dataclass(frozen=True, eq=False)
class CorrectorProfile:
    grid: np.ndarray
    psi_values: np.ndarray
    tail: FarFieldModel
    k2: float
    k3: float
    drag: float
    residual: float
    _interp: _Interp | None = field(default=None, repr=False)

    def __post_init__(self):
        if self._interp is None:
            object.__setattr__(self, "_interp", _Interp(self.grid, self.psi_values, self.tail))

    def __call__(self, x):
        return self._interp(x)

    def derivative(self, x):
        return self._interp(x, 1)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.psi_values)))


# ---------------------------------------------------------------------------
# layer


def _layer_tail(alpha, b_left=0.0, b_right=0.0, radius=np.inf):
    a = -1.0 / (alpha * np.pi)
    return FarFieldModel(0.0, 1.0, a, a, b_left, b_right, radius)


def _fit_window(x, extent):
    ax = np.abs(x)
    return (ax >= 5.0) & (ax <= 0.5 * extent)


def _newton(quad, nodes, u0, tail, potential, tol, max_iter):
    """Bordered Newton: ``I[u] - W'(u) - lam u' = 0`` plus ``u(0) = 1/2``.

    The extra unknown ``lam`` removes the translation null mode; it tends
    to zero as the discrete problem is resolved and is returned for
    diagnostics.
    """
    free = np.arange(N_PIN, nodes.size - N_PIN)
    centre = int(np.argmin(np.abs(nodes))) - N_PIN
    A = quad.matrix()
    A_free = A[:, free]
    u = u0.copy()
    u[:N_PIN] = tail(nodes[:N_PIN])
    u[-N_PIN:] = tail(nodes[-N_PIN:])
    u[free[centre]] = 0.5
    const = quad.affine(tail) + A[:, :N_PIN] @ u[:N_PIN] + A[:, -N_PIN:] @ u[-N_PIN:]
    lam = 0.0

    def slope(v):
        return np.gradient(v, nodes)[free]

    def resid(v, lam):
        return A_free @ v[free] + const - potential.deriv1(v[free]) - lam * slope(v)

    r = resid(u, lam)
    norm = np.max(np.abs(r))
    m = free.size
    for it in range(max_iter):
        J = np.zeros((m + 1, m + 1))
        J[:m, :m] = A_free - np.diag(potential.deriv2(u[free]))
        J[:m, m] = -slope(u)
        J[m, centre] = 1.0
        d = np.linalg.solve(J, -np.r_[r, u[free[centre]] - 0.5])
        step = 1.0
        while True:
            trial = u.copy()
            trial[free] += step * d[:m]
            lt = lam + step * d[m]
            rt = resid(trial, lt)
            nt = np.max(np.abs(rt))
            if (nt < norm or nt <= tol) and np.all(np.diff(trial) > 0):
                break
            step *= 0.5
            if step < 1e-6:
                break
        if step < 1e-6:
            if norm <= 10 * tol:
                break
            raise ConvergenceError("line search failed to reduce residual while keeping monotonicity")
        u, lam, r, norm = trial, lt, rt, nt
        log.debug("layer newton it=%d residual=%.3e step=%.3g lam=%.2e", it, norm, step, lam)
        if norm <= tol or np.max(np.abs(step * d[:m])) < 1e-14:
            break
    else:
        raise ConvergenceError(f"layer Newton did not converge: residual {norm:.3e}")
    true_res = np.max(np.abs(A_free @ u[free] + const - potential.deriv1(u[free])))
    return u, float(true_res), float(lam)


def _fit_layer_tail(nodes, u, alpha, extent):
    a = -1.0 / (alpha * np.pi)
    out_b, out_a = [], []
    for side in (nodes < 0, nodes > 0):
        sel = side & _fit_window(nodes, extent)
        x = nodes[sel]
        y = u[sel] - _heaviside(x)
        # free fit of a/x + b/x^2
        M = np.column_stack([1 / x, 1 / x**2])
        coef = np.linalg.lstsq(M, y, rcond=None)[0]
        out_a.append(float(coef[0]))
        # 1/x^2 correction with the 1/x coefficient fixed
        out_b.append(float(np.linalg.lstsq((1 / x**2)[:, None], y - a / x, rcond=None)[0][0]))
    return out_a, out_b


def solve_layer(potential: Potential, grid_spec: GridSpec | None = None, tol: float = 1e-9,
                max_iter: int = 60) -> LayerProfile:
    """Damped Newton solve of the layer equation on a graded grid."""
    grid_spec = grid_spec or GridSpec()
    report = validate(potential)
    if not report.passed:
        raise ValueError(f"potential fails assumptions: {report.failures()}")
    alpha = potential.alpha
    nodes = grid_spec.nodes(alpha)
    extent = float(nodes[-1])
    free = np.arange(N_PIN, nodes.size - N_PIN)
    quad = PVQuadrature(nodes, nodes[free])
    tail = _layer_tail(alpha, radius=extent)
    guess = 0.5 + np.arctan(alpha * nodes) / np.pi
    u, _, _ = _newton(quad, nodes, guess, tail, potential, tol, max_iter)
    # refit the 1/x**2 tail corrections and solve once more
    _, b = _fit_layer_tail(nodes, u, alpha, extent)
    tail = _layer_tail(alpha, b[0], b[1], radius=extent)
    u, res, lam = _newton(quad, nodes, u, tail, potential, tol, max_iter)
    log.info("layer solved: %d nodes, residual %.2e, lambda %.2e", nodes.size, res, lam)
    if not np.all(np.diff(u) > 0):
        raise ConvergenceError("layer lost monotonicity")

    a_fit, b = _fit_layer_tail(nodes, u, alpha, extent)
    tail = _layer_tail(alpha, b[0], b[1], radius=extent)
    spl = make_interp_spline(nodes, u, k=5)
    du = spl.derivative()(nodes)
    far = np.abs(nodes) >= 1.0
    k1 = float(np.max(nodes[far] ** 2 * np.abs(u[far] - _heaviside(nodes[far])
                                                + 1.0 / (alpha * np.pi * nodes[far]))))
    prof = LayerProfile(nodes, u, du, tail, c0=np.nan, alpha=alpha, k1=k1,
                        fitted_coeff1=(a_fit[0], a_fit[1]), residual=float(res),
                        potential_name=potential.name)
    return replace(prof, c0=mobility(prof), _interp=None)


def _gl_integral_sq_derivative(nodes, values, order=6):
    spl = make_interp_spline(nodes, values, k=5).derivative()
    gx, gw = np.polynomial.legendre.leggauss(order)
    w = np.diff(nodes)
    pts = nodes[:-1, None] + w[:, None] * 0.5 * (gx + 1)
    wts = w[:, None] * 0.5 * gw
    return float(np.sum(wts * spl(pts) ** 2))


def _tail_sq_derivative(a, b, X):
    # int_X^inf (a/x^2 + 2b/x^3)^2 dx for the derivative of a/x + b/x^2 (up to sign)
    return a * a / (3 * X**3) + a * b / X**4 + 4 * b * b / (5 * X**5)


def mobility(profile: LayerProfile) -> float:
    """``c0 = 1 / int (u')**2`` including the tail contributions."""
    nodes = profile.grid
    inner = _gl_integral_sq_derivative(nodes, profile.u_values)
    t = profile.tail
    tails = (_tail_sq_derivative(t.right_coeff1, t.right_coeff2, nodes[-1])
             + _tail_sq_derivative(-t.left_coeff1, t.left_coeff2, -nodes[0]))
    return 1.0 / (inner + tails)


def rescale_to_unit_mobility(potential: Potential, epsilon: float,
                             layer: LayerProfile | None = None,
                             grid_spec: GridSpec | None = None):
    """Return ``(c0 W, sqrt(c0) eps)``; the new potential has mobility 1."""
    if layer is None:
        layer = solve_layer(potential, grid_spec)
    c0 = layer.c0
    return scale(potential, c0), float(np.sqrt(c0) * epsilon)


def interaction_mobility(layer: LayerProfile) -> float:
    """Mobility of the particle limit of the phase-field equation.

    With the operator normalised to the symbol ``-|xi|`` the layer tails
    are ``-1/(alpha pi x)``, and matching the far field of one layer to the
    core of its neighbour gives the pair law
    ``dx_i/dt = (c0/pi) sum b_i b_j / (x_i - x_j)``.
    """
    return layer.c0 / np.pi


def rescale_to_unit_interaction(potential: Potential, grid_spec: GridSpec | None = None):
    """Scale ``W`` so that :func:`interaction_mobility` equals 1.

    Returns ``(scaled potential, its layer)``.  For ``sin(pi v)**2`` the
    factor is ``1/pi**2``.
    """
    layer = solve_layer(potential, grid_spec)
    factor = interaction_mobility(layer)
    scaled = scale(potential, factor)
    return scaled, solve_layer(scaled, grid_spec)


# ---------------------------------------------------------------------------
# corrector


def solve_corrector(layer: LayerProfile, potential: Potential, passes: int = 3,
                    max_condition: float = 1e12) -> CorrectorProfile:
    """Solve the corrector problem on the layer grid."""
    if layer.residual > 1e-6:
        raise ValueError("layer residual too large for the corrector solve")
    nodes = layer.grid
    n = nodes.size
    extent = float(nodes[-1])
    alpha = potential.alpha
    free = np.arange(N_PIN, n - N_PIN)
    pinned = np.r_[np.arange(N_PIN), np.arange(n - N_PIN, n)]
    quad = PVQuadrature(nodes, nodes[free])
    A = quad.matrix()
    u = layer.u_values[free]
    du = layer.u_prime_values
    w2 = potential.deriv2(u)
    rhs0 = (w2 - alpha) / alpha
    # trapezoid weights for the orthogonality  int psi u' = 0
    tw = np.zeros(n)
    dx = np.diff(nodes)
    tw[:-1] += 0.5 * dx
    tw[1:] += 0.5 * dx

    M = np.zeros((free.size + 1, free.size + 1))
    M[:-1, :-1] = A[:, free] - np.diag(w2)
    M[:-1, -1] = -du[free]
    M[-1, :-1] = (tw * du)[free]
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > max_condition:
        raise ConvergenceError(f"corrector system badly conditioned (cond={cond:.3e}); refine the grid")

    tail = FarFieldModel(cutoff_radius=extent)
    psi = np.zeros(n)
    for _ in range(passes):
        psi[pinned] = tail(nodes[pinned])
        b = rhs0 - quad.affine(tail) - A[:, pinned] @ psi[pinned]
        bb = np.r_[b, -np.dot(tw[pinned] * du[pinned], psi[pinned])]
        sol = np.linalg.solve(M, bb)
        psi[free] = sol[:-1]
        eta = float(sol[-1])
        k2, b_left, b_right = _fit_corrector_tail(nodes, psi, extent)
        tail = FarFieldModel(0.0, 0.0, k2, k2, b_left, b_right, extent)
    psi[pinned] = tail(nodes[pinned])
    # residual of the defining equation (unit weight on u'); it is small
    # only when the potential has unit mobility, see the module docstring
    resid = A @ psi + quad.affine(tail) - w2 * psi[free] - rhs0 - du[free]
    if abs(eta - 1.0) > 1e-6:
        log.warning("corrector drag %.6g differs from 1; rescale the potential to unit mobility", eta)
    far = np.abs(nodes) >= 1.0
    k3 = float(np.max(nodes[far] ** 2 * np.abs(psi[far] - k2 / nodes[far])))
    return CorrectorProfile(nodes, psi, tail, k2=k2, k3=k3, drag=eta,
                            residual=float(np.max(np.abs(resid))))


def _fit_corrector_tail(nodes, psi, extent):
    sel = _fit_window(nodes, extent)
    x = nodes[sel]
    y = psi[sel]
    left = (x < 0).astype(float)
    M = np.column_stack([1 / x, left / x**2, (1 - left) / x**2])
    k2, bl, br = np.linalg.lstsq(M, y, rcond=None)[0]
    return float(k2), float(bl), float(br)


# ---------------------------------------------------------------------------
# oriented profiles


def oriented_layer(x, b: int, layer: LayerProfile):
    """``u(x; +1) = u(x)``, ``u(x; -1) = u(-x) - 1``."""
    x = np.asarray(x, dtype=float)
    if b == 1:
        return layer(x)
    if b == -1:
        return layer(-x) - 1.0
    raise ValueError("orientation must be +1 or -1")


def oriented_layer_derivative(x, b: int, layer: LayerProfile):
    """Derivative in ``x`` of :func:`oriented_layer` (``u'(bx)`` for both signs)."""
    x = np.asarray(x, dtype=float)
    if b not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    return b * layer.derivative(b * x)


def oriented_corrector(x, b: int, corrector: CorrectorProfile):
    """``psi(x; b) = b psi(b x)``."""
    x = np.asarray(x, dtype=float)
    if b not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    return b * corrector(b * x)


def oriented_corrector_derivative(x, b: int, corrector: CorrectorProfile):
    x = np.asarray(x, dtype=float)
    if b not in (1, -1):
        raise ValueError("orientation must be +1 or -1")
    return corrector.derivative(b * x)


# ---------------------------------------------------------------------------
# the operator applied to a profile at arbitrary points


class OperatorEvaluator:
    """``I`` of a sampled profile at arbitrary points.

    Quadrature with the profile's tail model is used for ``|y|`` up to half
    of the grid extent; beyond that ``fallback(y)`` (the profile equation
    solved for ``I``) is used.
    """

    def __init__(self, grid, values, tail: FarFieldModel, fallback):
        self.grid = grid
        self.values = values
        self.tail = tail
        self.fallback = fallback
        self.limit = 0.5 * float(grid[-1])

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.asarray(self.fallback(flat), dtype=float).copy()
        inner = np.abs(flat) <= self.limit
        if np.any(inner):
            q = PVQuadrature(self.grid, flat[inner])
            out[inner] = q.linear(self.values) + q.affine(self.tail)
        return out.reshape(y.shape)


def layer_operator(layer: LayerProfile, potential: Potential) -> OperatorEvaluator:
    """``I[u]``; far out ``I[u] = W'(u)`` is used."""
    return OperatorEvaluator(layer.grid, layer.u_values, layer.tail,
                             lambda y: potential.deriv1(layer(y)))


def corrector_operator(corrector: CorrectorProfile, layer: LayerProfile,
                       potential: Potential) -> OperatorEvaluator:
    """``I[psi]``; far out the corrector equation is used."""
    alpha = potential.alpha

    def fallback(y):
        w2 = potential.deriv2(layer(y))
        return w2 * corrector(y) + (w2 - alpha) / alpha + layer.derivative(y)

    return OperatorEvaluator(corrector.grid, corrector.psi_values, corrector.tail, fallback)


# ---------------------------------------------------------------------------
# export


def _fmt(v: float) -> str:
    return "%.17g" % float(v)


def export_profile(path, layer: LayerProfile, corrector: CorrectorProfile | None = None,
                   potential: Potential | None = None) -> tuple[str, str]:
    """Write ``<stem>.csv`` (node, u, u', psi) and a ``<stem>.json`` header.

    Numbers use 17 significant digits so that a re-read is bit exact.
    Returns the two paths.
    """
    stem = str(path)
    for ext in (".csv", ".json"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    csv_path, json_path = stem + ".csv", stem + ".json"
    psi = corrector.psi_values if corrector is not None else None
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", "u", "u_prime", "psi"])
        for i, x in enumerate(layer.grid):
            w.writerow([_fmt(x), _fmt(layer.u_values[i]), _fmt(layer.u_prime_values[i]),
                        _fmt(psi[i]) if psi is not None else ""])
    header = {
        "potential": potential.describe() if potential is not None else {"name": layer.potential_name},
        "alpha": _fmt(layer.alpha),
        "c0": _fmt(layer.c0),
        "k1": _fmt(layer.k1),
        "fitted_coeff1": [_fmt(a) for a in layer.fitted_coeff1],
        "layer_residual": _fmt(layer.residual),
        "layer_tail": {k: _fmt(v) for k, v in layer.tail.to_dict().items()},
    }
    if corrector is not None:
        header["corrector"] = {
            "k2": _fmt(corrector.k2), "k3": _fmt(corrector.k3), "drag": _fmt(corrector.drag),
            "residual": _fmt(corrector.residual),
            "tail": {k: _fmt(v) for k, v in corrector.tail.to_dict().items()},
        }
    with open(json_path, "w", newline="\n") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path


def import_profile(path) -> tuple[LayerProfile, CorrectorProfile | None, dict]:
    """Inverse of :func:`export_profile`."""
    stem = str(path)
    for ext in (".csv", ".json"):
        if stem.endswith(ext):
            stem = stem[: -len(ext)]
    with open(stem + ".json") as fh:
        header = json.load(fh)
    with open(stem + ".csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    grid = np.array([float(r[0]) for r in rows])
    u = np.array([float(r[1]) for r in rows])
    du = np.array([float(r[2]) for r in rows])
    tail = FarFieldModel(**{k: float(v) for k, v in header["layer_tail"].items()})
    layer = LayerProfile(grid, u, du, tail, c0=float(header["c0"]), alpha=float(header["alpha"]),
                         k1=float(header["k1"]),
                         fitted_coeff1=tuple(float(a) for a in header["fitted_coeff1"]),
                         residual=float(header["layer_residual"]),
                         potential_name=header["potential"].get("name", "custom"))
    corr = None
    if "corrector" in header and rows and rows[0][3] != "":
        c = header["corrector"]
        psi = np.array([float(r[3]) for r in rows])
        corr = CorrectorProfile(grid, psi, FarFieldModel(**{k: float(v) for k, v in c["tail"].items()}),
                                k2=float(c["k2"]), k3=float(c["k3"]), drag=float(c["drag"]),
                                residual=float(c["residual"]))
    return layer, corr, header
