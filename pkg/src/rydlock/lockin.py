"""Frequency dither and lock-in demodulation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.signal import lfilter

from .atomic import LadderScheme, RydbergTarget, detector_signal_array

__all__ = [
    "DitherSpec",
    "ErrorCurve",
    "NoLockPointError",
    "SamplingError",
    "CalibrationError",
    "first_harmonic",
    "static_error_curve",
    "demodulate",
    "settled_value",
    "calibrate_slope",
    "DEFAULT_SLOPE",
]

DEFAULT_SLOPE = 1e-8  # 10 mV/MHz in V/Hz


class NoLockPointError(ValueError):
    """Error curve has no zero crossing on the requested grid."""


class SamplingError(ValueError):
    """Time series too coarse to resolve the dither."""


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class DitherSpec:
    """Sinusoidal FM dither and the lock-in that demodulates it.

    ``depth`` is the peak-to-peak frequency excursion, so the laser swings
    by ``amplitude = depth / 2`` either side of its mean.  ``phase`` is the lock-in reference phase relative to the dither and
    ``lp_order`` the number of cascaded single-pole low-pass stages.
    """

    depth: float = 15e6
    f_mod: float = 90e3
    phase: float = 0.0
    tau_lp: float = 100e-6
    lp_order: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.depth) and self.depth >= 0):
            raise ValueError("dither depth must be >= 0")
        if not self.f_mod > 0:
            raise ValueError("modulation frequency must be positive")
        if not self.tau_lp > 0:
            raise ValueError("lock-in time constant must be positive")
        if self.lp_order < 1:
            raise ValueError("low-pass order must be >= 1")
        if self.f_mod * self.tau_lp < 1:
            warnings.warn("lock-in time constant shorter than one dither period; "
                          "expect demodulation ripple", RuntimeWarning, stacklevel=3)

    @property
    def amplitude(self) -> float:
        """Peak frequency excursion (Hz)."""
        return 0.5 * self.depth


@dataclass(frozen=True)
class ErrorCurve:
    grid: np.ndarray
    values: np.ndarray
    slope_at_zero: float
    zero_crossing: float

    def capture_range(self):
        """Detunings of the error extrema bracketing the zero crossing."""
        g, v = self.grid, self.values
        i0 = int(np.searchsorted(g, self.zero_crossing))
        sign = np.sign(self.slope_at_zero)
        left = v[:i0] * sign
        right = v[i0:] * sign
        lo = g[int(np.argmin(left))] if left.size else g[0]
        hi = g[i0 + int(np.argmax(right))] if right.size else g[-1]
        return float(lo), float(hi)

    def scaled(self, factor: float) -> "ErrorCurve":
        return ErrorCurve(self.grid, self.values * factor,
                          self.slope_at_zero * factor, self.zero_crossing)


def first_harmonic(signal, center, amplitude, npoints=128):
    """Quasi-static lock-in output ``(2/T) int S(x + a sin wt) sin wt dt``.

    ``signal`` must accept an array and broadcast.  The periodic trapezoid
    rule with ``npoints`` samples is spectrally accurate for smooth S.
    """
    if npoints < 64:
        raise ValueError("use at least 64 points per dither period")
    center = np.asarray(center, dtype=float)
    theta = 2.0 * np.pi * np.arange(npoints) / npoints
    s = np.sin(theta)
    x = center[..., None] + amplitude * s
    return 2.0 / npoints * np.sum(signal(x) * s, axis=-1)


def _axis_signal(scheme, target, axis, fixed, gain, c3):
    others = [float(f) for f in fixed]

    def signal(x):
        args = others[:axis - 1] + [x] + others[axis - 1:]
        return detector_signal_array(*args, scheme, target, gain=gain, c3=c3)

    return signal


def static_error_curve(scheme: LadderScheme, target: RydbergTarget, dither: DitherSpec,
                       axis: int, grid, fixed=(0.0, 0.0), gain: float = 1.0,
                       npoints: int = 128, c3: float | None = None) -> ErrorCurve:
    """Dither-cycle-averaged error signal along one laser's detuning.

    With zero depth the curve is identically zero and carries no lock point
    (``zero_crossing`` is NaN, slope 0).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    signal = _axis_signal(scheme, target, axis, fixed, gain, c3)
    if dither.depth == 0:
        return ErrorCurve(grid, np.zeros_like(grid), 0.0, math.nan)
    values = first_harmonic(signal, grid, dither.amplitude, npoints)

    def err(x):
        return float(first_harmonic(signal, np.array([x]), dither.amplitude, npoints)[0])

    zero = find_lock_point(err, grid, values)
    h = 1e3
    slope = (err(zero + h) - err(zero - h)) / (2 * h)
    return ErrorCurve(grid, values, slope, zero)


def find_lock_point(err, grid, values, xtol=1e-3):
    """Root of ``err`` in the steepest sign-changing bracket of ``values``."""
    sgn = np.sign(values)
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    exact = np.nonzero(values == 0)[0]
    candidates = [(abs(values[i + 1] - values[i]), "bracket", i) for i in idx]
    for i in exact:
        lo, hi = max(i - 1, 0), min(i + 1, len(values) - 1)
        if values[lo] * values[hi] < 0:
            candidates.append((abs(values[hi] - values[lo]), "exact", i))
    if not candidates:
        raise NoLockPointError("error curve has no sign change on the grid")
    _, kind, i = max(candidates, key=lambda c: c[0])
    if kind == "exact":
        return float(grid[i])
    return float(brentq(err, grid[i], grid[i + 1], xtol=xtol, rtol=4 * np.finfo(float).eps))


def demodulate(signal, dt: float, dither: DitherSpec, t0: float = 0.0, state=None):
    """Lock-in output for a sampled detector voltage.

    Multiplies by ``2 sin(2 pi f t + phase)`` and applies ``lp_order``
    single-pole low-pass stages (time constant ``tau_lp``, exact
    exponential discretization).  Returns ``(output, state)``; pass the
    state back in to continue from ``t0 + len(signal) * dt``.
    """
    if dt > 1.0 / (20.0 * dither.f_mod):
        raise SamplingError(f"dt={dt:g} s undersamples the {dither.f_mod:g} Hz dither "
                            f"(need dt <= {1.0 / (20.0 * dither.f_mod):g} s)")
    x = np.asarray(signal, dtype=float)
    t = t0 + dt * np.arange(x.size)
    y = 2.0 * x * np.sin(2.0 * np.pi * dither.f_mod * t + dither.phase)
    alpha = -math.expm1(-dt / dither.tau_lp)
    b, a = [alpha], [1.0, alpha - 1.0]
    zi = np.zeros(dither.lp_order) if state is None else np.asarray(state, dtype=float).copy()
    for k in range(dither.lp_order):
        y, zf = lfilter(b, a, y, zi=[(1.0 - alpha) * zi[k]])
        zi[k] = y[-1] if y.size else zi[k]
    return y, zi


def settled_value(output, dt: float, dither: DitherSpec, periods: int = 200) -> float:
    """Mean of a lock-in output over its last ``periods`` dither periods."""
    n = int(round(periods / (dither.f_mod * dt)))
    n = max(1, min(n, len(output)))
    return float(np.mean(output[-n:]))


def calibrate_slope(curve: ErrorCurve, target_slope: float = DEFAULT_SLOPE) -> float:
    """Gain ``g`` with ``g * curve.slope_at_zero == target_slope``."""
    if not (math.isfinite(curve.slope_at_zero) and curve.slope_at_zero != 0):
        raise CalibrationError("cannot calibrate an error curve with zero slope")
    return target_slope / curve.slope_at_zero
