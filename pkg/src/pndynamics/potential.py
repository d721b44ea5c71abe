"""Periodic multi-well potentials.

A potential is a 1-periodic function ``W`` with ``W(0) = 0``, ``W > 0`` on
``(0, 1)`` and ``W''(0) > 0``.  The prototype is ``sin(pi v)**2``.  Custom
potentials are described by Fourier coefficients of a 1-periodic function::

    W(v) = a0 + sum_k a_k cos(2 pi k v) + b_k sin(2 pi k v)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

__all__ = [
    "Potential",
    "Check",
    "ValidationReport",
    "builtin_sine",
    "from_fourier",
    "scale",
    "validate",
]

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Potential:
    """Energy ``W`` with its first two derivatives.

    ``holder_exponent`` is a regularity tag only; no numerics use it.
    """

    eval: ArrayFn
    deriv1: ArrayFn
    deriv2: ArrayFn
    name: str = "custom"
    holder_exponent: float = 0.5
    period: float = 1.0
    # Fourier description (a0, cos coeffs, sin coeffs) when available
    fourier: tuple | None = field(default=None, compare=False)

    def __call__(self, v):
        return self.eval(np.asarray(v, dtype=float))

    @property
    def alpha(self) -> float:
        """Well curvature ``W''(0)``."""
        return float(self.deriv2(np.asarray(0.0)))

    def max_curvature(self, samples: int = 2048) -> float:
        """``max |W''|`` over one period (sampled)."""
        v = np.linspace(0.0, 1.0, samples, endpoint=False)
        return float(np.max(np.abs(self.deriv2(v))))

    def describe(self) -> dict:
        out = {"name": self.name}
        if self.fourier is not None:
            a0, ca, sa = self.fourier
            out.update(a0=a0, cos=list(ca), sin=list(sa))
        return out


def from_fourier(a0: float, cos: Sequence[float] = (), sin: Sequence[float] = (),
                 name: str = "fourier") -> Potential:
    """Potential from Fourier coefficients of a 1-periodic function."""
    ca = np.asarray(cos, dtype=float)
    sa = np.asarray(sin, dtype=float)
    kc = 2.0 * np.pi * np.arange(1, ca.size + 1)
    ks = 2.0 * np.pi * np.arange(1, sa.size + 1)

    def _outer(k, v):
        v = np.asarray(v, dtype=float)
        return np.multiply.outer(v, k)

    def w(v):
        return (a0 + np.cos(_outer(kc, v)) @ ca + np.sin(_outer(ks, v)) @ sa)

    def dw(v):
        return (-np.sin(_outer(kc, v)) @ (kc * ca) + np.cos(_outer(ks, v)) @ (ks * sa))

    def d2w(v):
        return (-np.cos(_outer(kc, v)) @ (kc**2 * ca) - np.sin(_outer(ks, v)) @ (ks**2 * sa))

    return Potential(w, dw, d2w, name=name,
                     fourier=(float(a0), tuple(ca.tolist()), tuple(sa.tolist())))


def builtin_sine() -> Potential:
    """``W(v) = sin(pi v)**2`` with ``alpha = 2 pi**2``."""
    pi = np.pi

    def w(v):
        return np.sin(pi * np.asarray(v, dtype=float)) ** 2

    def dw(v):
        return pi * np.sin(2 * pi * np.asarray(v, dtype=float))

    def d2w(v):
        return 2 * pi**2 * np.cos(2 * pi * np.asarray(v, dtype=float))

    return Potential(w, dw, d2w, name="sine", fourier=(0.5, (-0.5,), ()))


def scale(potential: Potential, factor: float) -> Potential:
    """Multiply ``W`` (and hence ``W'``, ``W''``, ``alpha``) by ``factor > 0``."""
    factor = float(factor)
    if not factor > 0:
        raise ValueError(f"scale factor must be positive, got {factor}")
    if factor == 1.0:
        return potential
    p = potential
    fourier = None
    if p.fourier is not None:
        a0, ca, sa = p.fourier
        fourier = (a0 * factor, tuple(c * factor for c in ca), tuple(s * factor for s in sa))
    return Potential(
        lambda v: factor * p.eval(v),
        lambda v: factor * p.deriv1(v),
        lambda v: factor * p.deriv2(v),
        name=f"{p.name}*{factor:.17g}",
        holder_exponent=p.holder_exponent,
        fourier=fourier,
    )


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    residual: float


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def _refined_minimum(potential: Potential, v: np.ndarray, w: np.ndarray) -> float:
    # polish every sampled interior local minimum with a bounded 1-d search
    best = float(np.min(w))
    idx = np.where((w[1:-1] <= w[:-2]) & (w[1:-1] <= w[2:]))[0] + 1
    for i in idx:
        lo, hi = v[i - 1], v[i + 1]
        res = minimize_scalar(lambda s: float(potential.eval(np.asarray(s))),
                              bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = min(best, float(res.fun))
    return best


def validate(potential: Potential, samples: int = 1024, tol: float = 1e-10) -> ValidationReport:
    """Check the multi-well assumptions on a sample grid.

    Failures are reported, never raised.  ``residual`` is the worst-case
    violation for each condition (0 means comfortably satisfied).
    """
    if samples < 16:
        raise ValueError("samples must be >= 16")
    v = np.linspace(0.0, 1.0, samples + 1)
    w = np.asarray(potential.eval(v), dtype=float)
    scale_w = max(1.0, float(np.max(np.abs(w))))
    checks = []

    shifts = np.arange(-2, 3)
    per_res = 0.0
    for k in shifts:
        per_res = max(per_res, float(np.max(np.abs(potential.eval(v + k) - w))))
    checks.append(Check("periodicity", per_res <= tol * scale_w, per_res))

    w0 = abs(float(potential.eval(np.asarray(0.0))))
    checks.append(Check("zero_at_origin", w0 <= tol * scale_w, w0))

    interior = v[1:-1]
    wi = w[1:-1]
    wmin = _refined_minimum(potential, interior, wi)
    checks.append(Check("positive_on_unit_interval", wmin > 0.0, max(0.0, -wmin)))

    alpha = potential.alpha
    checks.append(Check("positive_curvature", alpha > 0.0, max(0.0, -alpha)))

    # integer wells: W(k) = W'(k) = 0
    ks = shifts.astype(float)
    well = float(max(np.max(np.abs(potential.eval(ks))), np.max(np.abs(potential.deriv1(ks)))))
    checks.append(Check("integer_wells", well <= 1e-12 * scale_w * 1e2, well))

    # derivative consistency by centred differences
    h = 1e-5
    xs = np.linspace(-0.5, 1.5, 97)
    fd1 = (potential.eval(xs + h) - potential.eval(xs - h)) / (2 * h)
    fd2 = (potential.deriv1(xs + h) - potential.deriv1(xs - h)) / (2 * h)
    d1 = potential.deriv1(xs)
    d2 = potential.deriv2(xs)
    r1 = float(np.max(np.abs(fd1 - d1)) / max(1.0, np.max(np.abs(d1))))
    r2 = float(np.max(np.abs(fd2 - d2)) / max(1.0, np.max(np.abs(d2))))
    checks.append(Check("derivative_consistency", max(r1, r2) <= 1e-6, max(r1, r2)))
    return ValidationReport(tuple(checks))
