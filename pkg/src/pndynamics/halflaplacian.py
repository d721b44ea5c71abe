"""The half Laplacian ``I = -(-Delta)^(1/2)`` in one dimension.

Two discretisations are provided:

* :func:`apply_spectral` -- Fourier multiplier ``-|xi|`` on a uniform
  periodic grid.
* :func:`apply_quadrature` -- principal value integral

      I[phi](x) = (1/pi) PV int (phi(x + z) - phi(x)) / z**2 dz

  on a (possibly graded) grid, with the factor ``1/pi`` so that both
  routes are the same operator (symbol ``-|xi|``).  The samples are
  interpolated by a quintic spline.  For ``|z| < r`` the integrand is
  regularised by subtracting the tangent line and integrated exactly;
  outside it Gauss-Legendre is used per cell, and a far-field model
  ``c + a/x + b/x**2`` beyond the grid is integrated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

__all__ = [
    "FarFieldModel",
    "SampledFunction",
    "PVQuadrature",
    "apply_spectral",
    "apply_quadrature",
    "cross_validate",
    "CrossValidation",
    "graded_grid",
    "spectral_symbol",
]


@dataclass(frozen=True)
class FarFieldModel:
    """Tail model ``c + a/x + b/x**2`` on each side of a bounded grid."""

    left_constant: float = 0.0
    right_constant: float = 0.0
    left_coeff1: float = 0.0
    right_coeff1: float = 0.0
    left_coeff2: float = 0.0
    right_coeff2: float = 0.0
    cutoff_radius: float = np.inf

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            left = self.left_constant + self.left_coeff1 / x + self.left_coeff2 / x**2
            right = self.right_constant + self.right_coeff1 / x + self.right_coeff2 / x**2
        return np.where(x < 0, left, right)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            left = -self.left_coeff1 / x**2 - 2 * self.left_coeff2 / x**3
            right = -self.right_coeff1 / x**2 - 2 * self.right_coeff2 / x**3
        return np.where(x < 0, left, right)

    def mismatch(self, nodes, values) -> float:
        """Relative mismatch between the model and the two boundary samples."""
        ends = np.array([nodes[0], nodes[-1]])
        vals = np.array([values[0], values[-1]])
        scale = max(1.0, float(np.max(np.abs(vals))))
        return float(np.max(np.abs(self(ends) - vals)) / scale)

    def with_offsets(self, left: float, right: float) -> "FarFieldModel":
        """Same tails with shifted plateau constants."""
        return FarFieldModel(self.left_constant + left, self.right_constant + right,
                             self.left_coeff1, self.right_coeff1,
                             self.left_coeff2, self.right_coeff2, self.cutoff_radius)

    def scaled(self, factor: float) -> "FarFieldModel":
        f = float(factor)
        return FarFieldModel(f * self.left_constant, f * self.right_constant,
                             f * self.left_coeff1, f * self.right_coeff1,
                             f * self.left_coeff2, f * self.right_coeff2, self.cutoff_radius)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in (
            "left_constant", "right_constant", "left_coeff1", "right_coeff1",
            "left_coeff2", "right_coeff2", "cutoff_radius")}


@dataclass(frozen=True)
class SampledFunction:
    nodes: np.ndarray
    values: np.ndarray
    farfield: FarFieldModel | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if nodes.ndim != 1 or nodes.size < 4:
            raise ValueError("need at least 4 nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")
        if values.shape[0] != nodes.size:
            raise ValueError("one value per node required")
        if not np.all(np.isfinite(values)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)


# ---------------------------------------------------------------------------
# spectral route


def spectral_symbol(n: int, domain_length: float) -> np.ndarray:
    """``|xi|`` for the real FFT of ``n`` samples over ``domain_length``."""
    return 2.0 * np.pi * np.fft.rfftfreq(n, d=domain_length / n)


def apply_spectral(values, domain_length: float, nodes=None) -> np.ndarray:
    """Apply ``-|xi|`` to one period of samples on a uniform grid.

    ``values`` may carry extra trailing dimensions; the transform runs along
    axis 0.  Pass ``nodes`` to have the grid checked for uniformity.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 4:
        raise ValueError("spectral grid needs at least 4 points")
    if not domain_length > 0:
        raise ValueError("domain_length must be positive")
    if nodes is not None:
        d = np.diff(np.asarray(nodes, dtype=float))
        if np.max(np.abs(d - domain_length / n)) > 1e-9 * domain_length:
            raise ValueError("spectral route requires a uniform grid covering one period")
    k = spectral_symbol(n, domain_length)
    vh = np.fft.rfft(values, axis=0)
    shape = (-1,) + (1,) * (values.ndim - 1)
    return np.fft.irfft(-k.reshape(shape) * vh, n=n, axis=0)


# ---------------------------------------------------------------------------
# quadrature route


def _g1(u):
    # (u - log(1+u)) / u**2, series near 0
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-2
    us = u[small]
    m = np.arange(10)
    out[small] = np.polyval(((-1.0) ** m / (m + 2))[::-1], us)
    ub = u[~small]
    out[~small] = (ub - np.log1p(ub)) / ub**2
    return out


def _g2(u):
    # (1 + 1/(1+u))/u**2 - 2 log(1+u)/u**3, series near 0
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 1e-2
    us = u[small]
    m = np.arange(10)
    out[small] = np.polyval(((-1.0) ** m * (m + 1) / (m + 3))[::-1], us)
    ub = u[~small]
    out[~small] = (1 + 1 / (1 + ub)) / ub**2 - 2 * np.log1p(ub) / ub**3
    return out


def _tail_integrals(x, edge):
    """Closed forms of int_edge^inf w(y)/(y-x)^2 dy for w = 1, 1/y, 1/y^2.

    ``edge > 0`` and ``x < edge``.
    """
    d = edge - x
    u = x / d
    return 1.0 / d, _g1(u) / d**2, _g2(u) / d**3


class PVQuadrature:
    """Principal-value quadrature for ``I`` at fixed query points.

    Parameters
    ----------
    nodes : array
        Strictly increasing sample grid.  With ``period`` set, the nodes
        cover one period ``[a, a + period)`` and the samples are extended
        periodically.
    query_points : array
        Evaluation points; each must lie at least ``inner_radius`` inside
        the node range (or inside the period for periodic data).
    inner_radius : float or array, optional
        Radius of the inner region.  Defaults to twice the local spacing.
    order : int
        Gauss-Legendre points per grid cell.
    degree : int
        Degree of the interpolating spline.
    period : float, optional
        Use the periodised kernel ``(pi/L)**2 / sin(pi z / L)**2`` over one
        period instead of far-field closed forms.
    """

    def __init__(self, nodes, query_points, inner_radius=None, order: int = 6,
                 degree: int = 5, period: float | None = None, chunk: int = 128):
        nodes = np.asarray(nodes, dtype=float)
        self.query = np.atleast_1d(np.asarray(query_points, dtype=float))
        if nodes.size < 4 or np.any(np.diff(nodes) <= 0):
            raise ValueError("nodes must be strictly increasing, at least 4")
        self.period = None if period is None else float(period)
        self.n = nodes.size
        if self.period is not None:
            L = self.period
            if nodes[-1] - nodes[0] >= L:
                raise ValueError("periodic nodes must cover less than one period")
            if np.any(self.query < nodes[0]) or np.any(self.query >= nodes[0] + L):
                raise ValueError("periodic query points must lie in one period")
            # tile to [a - L, a + 2L] so every half-period window fits
            t = np.concatenate([nodes - L, nodes, nodes + L, [nodes[0] + 2 * L]])
        else:
            t = nodes
        self.nodes = t
        widths = np.diff(t)
        if inner_radius is None:
            j = np.clip(np.searchsorted(t, self.query, side="right") - 1, 0, widths.size - 1)
            loc = np.maximum.reduce([widths[j], widths[np.maximum(j - 1, 0)],
                                     widths[np.minimum(j + 1, widths.size - 1)]])
            r = 2.0 * loc
        else:
            r = np.broadcast_to(np.asarray(inner_radius, dtype=float), self.query.shape).copy()
        if np.any(r <= 0):
            raise ValueError("inner_radius must be positive")
        if self.period is None and (np.any(self.query - r < t[0]) or np.any(self.query + r > t[-1])):
            raise ValueError("query points must lie inside the grid shrunk by inner_radius")
        if self.period is not None and np.any(r >= 0.5 * self.period):
            raise ValueError("inner_radius must be below half the period")
        self.radius = r
        self.order = int(order)
        self.degree = int(degree)
        self.chunk = int(chunk)
        gx, gw = np.polynomial.legendre.leggauss(self.order)
        self._gx = 0.5 * (gx + 1.0)
        self._gw = 0.5 * gw
        self.gl_points = (t[:-1, None] + widths[:, None] * self._gx[None, :]).ravel()
        self.gl_weights = (widths[:, None] * self._gw[None, :]).ravel()

    # -- helpers -------------------------------------------------------------

    def _kernel(self, z):
        if self.period is None:
            return 1.0 / z**2
        L = self.period
        return (np.pi / L) ** 2 / np.sin(np.pi * z / L) ** 2

    def _spline(self, values):
        if self.period is not None:
            values = np.concatenate([values, values, values, values[:1]], axis=0)
            return make_interp_spline(self.nodes, values, k=self.degree, axis=0,
                                      bc_type="periodic")
        return make_interp_spline(self.nodes, values, k=self.degree, axis=0)

    def _segment_points(self, a, b):
        # GL points/weights on segments [a, b]; empty when b <= a
        length = b - a
        # slivers below rounding level carry no weight
        length = np.where(length > 1e-12 * np.maximum(1.0, np.abs(a)), length, 0.0)
        pts = a[..., None] + length[..., None] * self._gx
        wts = length[..., None] * self._gw
        return pts, wts

    # -- main ----------------------------------------------------------------

    def linear(self, values) -> np.ndarray:
        """Part of ``I`` that is linear in the samples (tail constants excluded).

        ``values`` has shape ``(n,)`` or ``(n, m)``; output is ``(nq,)`` or
        ``(nq, m)``.
        """
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n:
            raise ValueError("one value per node required")
        spl = self._spline(values)
        dspl = spl.derivative()
        g_vals = spl(self.gl_points)
        s_x = spl(self.query)
        ds_x = dspl(self.query)
        d2_x = dspl.derivative()(self.query)
        d3_x = dspl.derivative(2)(self.query)
        t = self.nodes
        ncell = t.size - 1
        p = self.order
        extra = values.shape[1:]
        bshape = (-1,) + (1,) * len(extra)
        cell_of = np.repeat(np.arange(ncell), p)[None, :]
        out = np.empty((self.query.size,) + extra)

        def cell(y, side):
            return np.clip(np.searchsorted(t, y, side=side) - 1, 0, ncell - 1)

        for start in range(0, self.query.size, self.chunk):
            sl = slice(start, start + self.chunk)
            x = self.query[sl]
            r = self.radius[sl]
            lo, hi = x - r, x + r
            if self.period is None:
                a = np.full_like(x, t[0])
                b = np.full_like(x, t[-1])
            else:
                a = x - 0.5 * self.period
                b = x + 0.5 * self.period
            ja, jlo, jhi, jb = cell(a, "right"), cell(lo, "right"), cell(hi, "left"), cell(b, "left")
            # outer region [a, lo] u [hi, b]: whole cells first
            kern = self.gl_weights[None, :] * self._kernel(self.gl_points[None, :] - x[:, None])
            drop = ((cell_of < ja[:, None]) | (cell_of > jb[:, None])
                    | ((cell_of >= jlo[:, None]) & (cell_of <= jhi[:, None])))
            kern[drop] = 0.0
            cut = np.stack([ja, jlo, jhi, jb], axis=1)
            rows = np.arange(x.size)[:, None]
            # boundary cells are only partly inside [a, b]; re-added below
            kern[rows, ja[:, None] * p + np.arange(p)] = 0.0
            kern[rows, jb[:, None] * p + np.arange(p)] = 0.0
            res = kern @ g_vals
            total = kern.sum(axis=1)
            for k in range(4):
                dup = np.zeros(x.shape, dtype=bool)
                for m in range(k):
                    dup |= cut[:, m] == cut[:, k]
                c = cut[:, k]
                for s0, s1 in ((np.maximum(t[c], a), np.minimum(t[c + 1], lo)),
                               (np.maximum(t[c], hi), np.minimum(t[c + 1], b))):
                    s1 = np.where(dup, s0, s1)
                    pts, wts = self._segment_points(s0, s1)
                    kw = wts * self._kernel(np.where(wts > 0, pts - x[:, None], 1.0))
                    ev = spl(pts.ravel()).reshape(pts.shape + extra)
                    res = res + np.einsum("qp,qp...->q...", kw, ev)
                    total = total + kw.sum(axis=1)
            if self.period is None:
                # far-field part of  -phi(x) int dz/z^2
                total = total + 1.0 / (t[-1] - x) + 1.0 / (x - t[0])
            res = res - total.reshape(bshape) * s_x[sl]
            # inner region: the odd term integrates to zero, the rest is regular
            nin = int(np.max(jhi - jlo)) + 1
            k_idx = jlo[:, None] + 1 + np.arange(nin)[None, :]
            inside = k_idx <= jhi[:, None]
            bp = np.where(inside, t[np.minimum(k_idx, ncell)], hi[:, None])
            bp = np.sort(np.concatenate([lo[:, None], bp, hi[:, None], x[:, None]], axis=1), axis=1)
            pts, wts = self._segment_points(bp[:, :-1], bp[:, 1:])
            z = np.where(wts > 0, pts - x[:, None, None], 1.0)
            ev = spl(pts.ravel()).reshape(pts.shape + extra)
            zz = z.reshape(z.shape + (1,) * len(extra))
            num = ev - s_x[sl][:, None, None] - ds_x[sl][:, None, None] * zz
            integrand = num * self._kernel(zz)
            # Taylor form where the subtraction above cancels catastrophically
            # (query within rounding distance of a node)
            tiny = np.abs(zz) < 1e-3 * r.reshape(bshape)[:, None, None]
            if np.any(tiny):
                taylor = np.broadcast_to(0.5 * d2_x[sl][:, None, None] + d3_x[sl][:, None, None] * zz / 6,
                                         integrand.shape)
                if self.period is not None:
                    # periodic kernel minus 1/z**2 is regular: (pi/L)**2 / 3 at z = 0
                    taylor = taylor + num * ((np.pi / self.period) ** 2 / 3)
                integrand = np.where(tiny, taylor, integrand)
            res = res + np.einsum("qsp,qsp...->q...", wts, integrand)
            out[sl] = res
        return out / np.pi

    def affine(self, farfield: FarFieldModel) -> np.ndarray:
        """Contribution of the tail model constants and coefficients."""
        t = self.nodes
        x = self.query
        if t[-1] <= 0 or t[0] >= 0:
            raise ValueError("far-field closed forms need a grid straddling the origin")
        r0, r1, r2 = _tail_integrals(x, t[-1])
        l0, l1, l2 = _tail_integrals(-x, -t[0])
        ff = farfield
        return (ff.right_constant * r0 + ff.right_coeff1 * r1 + ff.right_coeff2 * r2
                + ff.left_constant * l0 - ff.left_coeff1 * l1 + ff.left_coeff2 * l2) / np.pi

    def matrix(self) -> np.ndarray:
        """Dense ``(nq, n)`` matrix of :meth:`linear`."""
        return self.linear(np.eye(self.n))

    def __call__(self, f: SampledFunction) -> np.ndarray:
        if self.period is not None:
            return self.linear(f.values)
        if f.farfield is None:
            raise ValueError("a bounded grid needs a far-field model")
        lin = self.linear(f.values)
        aff = self.affine(f.farfield)
        if lin.ndim > 1:
            aff = aff.reshape((-1,) + (1,) * (lin.ndim - 1))
        return lin + aff


def apply_quadrature(f: SampledFunction, query_points, inner_radius=None) -> np.ndarray:
    """``I[f]`` at ``query_points`` by principal-value quadrature."""
    return PVQuadrature(f.nodes, query_points, inner_radius)(f)


def graded_grid(h0: float, core: float, ratio: float, extent: float) -> np.ndarray:
    """Symmetric grid: uniform ``h0`` on ``[-core, core]``, geometric beyond.

    Contains 0.  The last cell is stretched to land exactly on ``extent``.
    """
    if not (h0 > 0 and core > 0 and ratio >= 1 and extent > core):
        raise ValueError("bad grid parameters")
    m = int(round(core / h0))
    inner = np.arange(0, m + 1) * (core / m)
    outer = []
    x, h = inner[-1], core / m
    while True:
        h *= ratio
        if x + h >= extent or x + 1.5 * h >= extent:
            outer.append(extent)
            break
        x += h
        outer.append(x)
    half = np.concatenate([inner, np.array(outer)])
    return np.concatenate([-half[:0:-1], half])


@dataclass(frozen=True)
class CrossValidation:
    discrepancy: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.discrepancy <= self.tolerance


def cross_validate(f, tolerance: float, kind: str = "periodic", n: int = 512,
                   length: float = 2 * np.pi, reference=None, farfield=None,
                   grid=None, query=None) -> CrossValidation:
    """Compare the two discretisations of ``I`` on a smooth test function.

    ``kind="periodic"``: ``f`` is sampled on ``n`` points of one period and
    the spectral result is compared with periodic quadrature at the nodes.
    ``kind="tails"``: quadrature on ``grid`` with ``farfield`` is compared
    with the analytic ``reference`` callable at ``query``.
    """
    if kind == "periodic":
        x = np.arange(n) * (length / n)
        vals = np.asarray(f(x), dtype=float)
        spec = apply_spectral(vals, length)
        quad = PVQuadrature(x, x, period=length).linear(vals)
        return CrossValidation(float(np.max(np.abs(spec - quad))), tolerance)
    if kind == "tails":
        q = np.asarray(query, dtype=float)
        vals = PVQuadrature(grid, q)(SampledFunction(grid, f(grid), farfield))
        return CrossValidation(float(np.max(np.abs(vals - reference(q)))), tolerance)
    raise ValueError(f"unknown kind {kind!r}")
