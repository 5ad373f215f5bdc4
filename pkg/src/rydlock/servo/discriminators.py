"""Lookup tables that stand in for the dithered discriminators.

Envelope-mode runs replace dither + demodulation with the static error
curve of each lock.  Cross-channel coupling enters through the lock-point
shift: the reference-cell zero crossing of laser 2 moves with laser 1,
and the detection-cell zero crossing of laser 3 moves with lasers 1 and 2.
Every shift here is a brute-force root of the dithered first harmonic.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..atomic import LadderScheme, RydbergTarget, detector_signal_array
from ..lockin import DEFAULT_SLOPE, DitherSpec, ErrorCurve, calibrate_slope, first_harmonic, static_error_curve

__all__ = ["Tables", "build_tables", "velocity_ratios"]

# table extents (Hz)
E2_SPAN, E2_STEP = 20e6, 20e3
E3_SPAN, E3_STEP = 60e6, 40e3
D1_SPAN, D1_STEP = 16e6, 0.5e6
U2_SPAN, U2_STEP = 8e6, 0.25e6
HARMONIC_POINTS = 64


@dataclass(frozen=True)
class Tables:
    """Calibrated discriminator tables on uniform grids.

    ``e2`` / ``e3`` are error voltages versus detuning from the lock point;
    ``shift2[i]`` is the laser-2 lock point at ``d1 = d1_grid[i]``;
    ``shift3[i, j]`` and ``gain3[i, j]`` are the laser-3 lock point and
    relative slope at ``d1 = d1_grid[i]``, ``d2 = ratio12 * d1 + u_grid[j]``.
    """

    e2_grid: np.ndarray
    e2: np.ndarray
    e3_grid: np.ndarray
    e3: np.ndarray
    d1_grid: np.ndarray
    shift2: np.ndarray
    u_grid: np.ndarray
    shift3: np.ndarray
    gain3: np.ndarray
    ratio12: float
    gain2_v: float  # detector gain calibrating laser-2 error to the target slope
    gain3_v: float
    capture2: tuple
    capture3: tuple
    curve2: ErrorCurve
    curve3: ErrorCurve


def velocity_ratios(scheme: LadderScheme):
    """Doppler transfer factors d2/d1 and d3/d1 for a fixed velocity class."""
    lam, sgn = scheme.wavelengths, scheme.signs
    return (sgn[0] * lam[0]) / (sgn[1] * lam[1]), (sgn[0] * lam[0]) / (sgn[2] * lam[2])


def _bisect(func, lo, hi, iterations=36):
    """Vectorized bisection; ``func(lo)`` and ``func(hi)`` must differ in sign."""
    flo = func(lo)
    fhi = func(hi)
    if np.any(flo * fhi > 0):
        raise RuntimeError("lock-point bracket lost its sign change")
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        fm = func(mid)
        left = flo * fm <= 0
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        flo = np.where(left, flo, fm)
    return 0.5 * (lo + hi)


@lru_cache(maxsize=16)
def build_tables(scheme: LadderScheme, target: RydbergTarget, dither2: DitherSpec,
                 dither3: DitherSpec, slope: float = DEFAULT_SLOPE) -> Tables:
    r12, r13 = velocity_ratios(scheme)

    # laser 2: reference cell, no third beam
    grid2 = np.arange(-E2_SPAN, E2_SPAN + E2_STEP / 2, E2_STEP)
    curve2 = static_error_curve(scheme, target, dither2, 2, grid2, fixed=(0.0, 0.0), c3=0.0)
    g2 = calibrate_slope(curve2, slope)
    curve2 = curve2.scaled(g2)
    d1 = np.arange(-D1_SPAN, D1_SPAN + D1_STEP / 2, D1_STEP)

    def err2(d2, d1v):
        sig = lambda x: detector_signal_array(d1v[..., None], x, 0.0, scheme, target, c3=0.0)
        return first_harmonic(sig, d2, dither2.amplitude, HARMONIC_POINTS)

    half2 = 0.5 * (curve2.capture_range()[1] - curve2.capture_range()[0])
    shift2 = _bisect(lambda x: err2(x, d1), r12 * d1 - 0.8 * half2, r12 * d1 + 0.8 * half2)
    shift2 = np.where(np.abs(d1) < 1e-9, curve2.zero_crossing, shift2)

    # laser 3: detection cell
    grid3 = np.arange(-E3_SPAN, E3_SPAN + E3_STEP / 2, E3_STEP)
    curve3 = static_error_curve(scheme, target, dither3, 3, grid3, fixed=(0.0, 0.0))
    g3 = calibrate_slope(curve3, slope)
    curve3 = curve3.scaled(g3)
    u = np.arange(-U2_SPAN, U2_SPAN + U2_STEP / 2, U2_STEP)
    D1, U = np.meshgrid(d1, u, indexing="ij")
    D2 = r12 * D1 + U

    def err3(d3):
        # the two-step term does not depend on d3 and has no first harmonic here
        sig = lambda x: detector_signal_array(D1[..., None], D2[..., None], x, scheme, target, c2=0.0)
        return g3 * first_harmonic(sig, d3, dither3.amplitude, HARMONIC_POINTS)

    half3 = 0.5 * (curve3.capture_range()[1] - curve3.capture_range()[0])
    center = r13 * D1 + (r13 / r12) * U
    shift3 = _bisect(err3, center - 0.8 * half3, center + 0.8 * half3)
    h = 1e3
    gain3 = (err3(shift3 + h) - err3(shift3 - h)) / (2 * h) / slope
    origin = (np.abs(D1) < 1e-9) & (np.abs(U) < 1e-9)
    shift3 = np.where(origin, curve3.zero_crossing, shift3)
    return Tables(grid2, curve2.values, grid3, curve3.values, d1, shift2, u, shift3, gain3,
                  r12, g2, g3, curve2.capture_range(), curve3.capture_range(), curve2, curve3)
