"""Velocity-integrated cascade spectroscopy signal of the ladder scheme.

The photodiode sees the first-step absorption reduced by atoms that the
second (and third) step remove from the cycling transition.  Each step is
a Lorentzian in its Doppler-shifted detuning ``d - s * v / lambda`` and the
product is averaged over a 1-D Maxwell-Boltzmann velocity density.

Two evaluation routes are provided:

* :func:`detector_signal` -- adaptive quadrature (scipy ``quad``), scalar.
* :func:`detector_signal_array` -- closed form.  A product of Lorentzians in
  ``v`` is expanded in partial fractions over its complex poles and each
  simple pole integrates against the Gaussian to a Faddeeva function.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import constants
from scipy.integrate import quad

from ._accel import jit
from .faddeeva import _COEF, _L, _w_upper, wofz

__all__ = [
    "RB85_MASS",
    "QUANTUM_DEFECTS",
    "DEMONSTRATED_RANGE",
    "LadderScheme",
    "RydbergTarget",
    "BeyondDemonstratedRange",
    "QuadratureError",
    "lorentzian",
    "rydberg_amplitude",
    "detector_signal",
    "detector_signal_array",
    "scan_lineshape",
    "cascade_integral",
]

RB85_MASS = 84.911789738 * constants.atomic_mass

QUANTUM_DEFECTS = {"P3/2": 2.65, "F7/2": 0.016}
DEMONSTRATED_RANGE = {"P3/2": (36, 70), "F7/2": (33, 90)}
_SERIES_WEIGHT = {"P3/2": 0.5, "F7/2": 1.0}
_SERIES_ALIASES = {
    "P": "P3/2", "P3/2": "P3/2", "P32": "P3/2", "NP": "P3/2",
    "F": "F7/2", "F7/2": "F7/2", "F72": "F7/2", "NF": "F7/2",
}


class BeyondDemonstratedRange(UserWarning):
    """Target outside the range of states the lock was demonstrated on."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature failed to converge."""


@dataclass(frozen=True)
class LadderScheme:
    """Three-step ladder: wavelengths (m), Lorentzian FWHM widths (Hz),
    contrasts of the two- and three-step terms, vapour temperature."""

    lambda1: float = 780e-9
    lambda2: float = 776e-9
    lambda3: float = 1260e-9
    gamma1: float = 6e6
    gamma2: float = 2e6
    gamma3: float = 3e6
    c2: float = 0.2
    c3: float = 0.05
    temperature: float = 293.0
    atomic_mass: float = RB85_MASS
    copropagating: bool = True

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "gamma1", "gamma2",
                     "gamma3", "temperature", "atomic_mass"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        for name in ("c2", "c3"):
            value = getattr(self, name)
            if not (0.0 < value <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {value!r}")

    @classmethod
    def rb85_default(cls, **overrides) -> "LadderScheme":
        """The 780/776/1260 nm 85Rb ladder; checks wavelength ordering."""
        scheme = cls(**overrides)
        # 780 nm > 776 nm, so only the third step is required to be longest.
        if not (scheme.lambda1 < scheme.lambda3 and scheme.lambda2 < scheme.lambda3):
            raise ValueError("Rb ladder needs the 1260 nm step to be the longest wavelength")
        return scheme

    @property
    def sigma_v(self) -> float:
        """1-D thermal velocity spread sqrt(kT/m) in m/s."""
        return math.sqrt(constants.k * self.temperature / self.atomic_mass)

    @property
    def wavelengths(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2, self.lambda3])

    @property
    def signs(self) -> np.ndarray:
        """Sign of k.v in each Doppler shift (third beam flips when counter-propagating)."""
        return np.array([1.0, 1.0, 1.0 if self.copropagating else -1.0])

    @property
    def velocity_halfwidths(self) -> np.ndarray:
        """HWHM of each Lorentzian expressed in velocity (m/s)."""
        return 0.5 * np.array([self.gamma1 * self.lambda1,
                               self.gamma2 * self.lambda2,
                               self.gamma3 * self.lambda3])


@dataclass(frozen=True)
class RydbergTarget:
    """Rydberg level nL_J addressed by the third step."""

    n: int
    series: str = "F7/2"
    quantum_defect: float | None = None
    amplitude_exponent: float = 3.0
    warning: str | None = field(default=None, compare=False)

    def __post_init__(self):
        key = str(self.series).upper().replace("_", "").replace(" ", "")
        series = _SERIES_ALIASES.get(key)
        if series is None:
            raise ValueError(f"unknown Rydberg series {self.series!r}; use P3/2 or F7/2")
        object.__setattr__(self, "series", series)
        if self.quantum_defect is None:
            object.__setattr__(self, "quantum_defect", QUANTUM_DEFECTS[series])
        if int(self.n) != self.n:
            raise ValueError(f"n must be an integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        if not self.n - self.quantum_defect > 0:
            raise ValueError("effective quantum number n - defect must be positive")
        lo, hi = DEMONSTRATED_RANGE[series]
        if not lo <= self.n <= hi:
            msg = (f"{self.label} is beyond demonstrated range "
                   f"({lo}{series[0]}-{hi}{series[0]})")
            object.__setattr__(self, "warning", msg)
            warnings.warn(msg, BeyondDemonstratedRange, stacklevel=3)

    @property
    def label(self) -> str:
        return f"{self.n}{self.series}"

    @property
    def effective_n(self) -> float:
        return self.n - self.quantum_defect

    @property
    def in_demonstrated_range(self) -> bool:
        return self.warning is None


def lorentzian(delta, gamma_fwhm):
    """Unit-peak Lorentzian ``(g/2)**2 / (delta**2 + (g/2)**2)``."""
    gamma_fwhm = np.asarray(gamma_fwhm, dtype=float)
    if np.any(~(gamma_fwhm > 0)):
        raise ValueError("Lorentzian width must be positive")
    hw2 = (0.5 * gamma_fwhm) ** 2
    return hw2 / (np.square(delta) + hw2)


def rydberg_amplitude(target: RydbergTarget, reference_n: int = 50) -> float:
    """Third-step signal amplitude relative to 50F7/2.

    Scales as ``(n - defect)**-p`` with an extra factor 1/2 for the P series.
    """
    ref = reference_n - QUANTUM_DEFECTS["F7/2"]
    return _SERIES_WEIGHT[target.series] * (ref / target.effective_n) ** target.amplitude_exponent


# --- closed form -----------------------------------------------------------

def cascade_integral(centers, halfwidths, sigma_v):
    """Gaussian average of a product of unit-peak Lorentzians in velocity.

    Parameters
    ----------
    centers : array_like, shape (..., K)
        Resonant velocity of each factor (m/s).
    halfwidths : array_like, shape (K,)
        HWHM of each factor (m/s).
    sigma_v : float
        Standard deviation of the velocity density.

    Returns
    -------
    integral : ndarray, shape (...)
    condition : ndarray, shape (...)
        Sum of partial-fraction term magnitudes over the result; large
        values flag cancellation between near-coincident poles.
    """
    c = np.asarray(centers, dtype=float)
    a = np.asarray(halfwidths, dtype=float)
    k = a.shape[-1]
    p = c + 1j * a  # upper poles
    scale = 1.0 / (math.sqrt(2.0) * sigma_v)
    prefactor = 1j * math.sqrt(math.pi / 2.0) / sigma_v
    num = np.prod(a * a)
    total = np.zeros(c.shape[:-1], dtype=complex)
    magnitude = np.zeros(c.shape[:-1])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j in range(k):
            pj = p[..., j]
            den = 2j * a[j]
            for m in range(k):
                if m == j:
                    continue
                pm = p[..., m]
                den = den * (pj - pm) * (pj - np.conj(pm))
            term = (num / den) * prefactor * wofz(pj * scale)
            total += term
            magnitude += np.abs(term)
        value = 2.0 * total.real
        # NaN/inf here means coincident poles; callers treat it as ill-conditioned
        condition = 2.0 * magnitude / np.abs(value)
    return value, condition


@jit
def cascade_integral_scalar(c1, c2, c3, a1, a2, a3, sigma_v, nfactors):
    """Compiled scalar version of :func:`cascade_integral` for K = 2 or 3."""
    scale = 1.0 / (math.sqrt(2.0) * sigma_v)
    prefactor = 1j * math.sqrt(math.pi / 2.0) / sigma_v
    p1 = c1 + 1j * a1
    p2 = c2 + 1j * a2
    if nfactors == 2:
        num = a1 * a1 * a2 * a2
        r1 = num / (2j * a1 * (p1 - p2) * (p1 - p2.conjugate()))
        r2 = num / (2j * a2 * (p2 - p1) * (p2 - p1.conjugate()))
        total = r1 * _w_upper(p1 * scale, _COEF, _L) + r2 * _w_upper(p2 * scale, _COEF, _L)
        return 2.0 * (prefactor * total).real
    p3 = c3 + 1j * a3
    num = a1 * a1 * a2 * a2 * a3 * a3
    r1 = num / (2j * a1 * (p1 - p2) * (p1 - p2.conjugate()) * (p1 - p3) * (p1 - p3.conjugate()))
    r2 = num / (2j * a2 * (p2 - p1) * (p2 - p1.conjugate()) * (p2 - p3) * (p2 - p3.conjugate()))
    r3 = num / (2j * a3 * (p3 - p1) * (p3 - p1.conjugate()) * (p3 - p2) * (p3 - p2.conjugate()))
    total = (r1 * _w_upper(p1 * scale, _COEF, _L)
             + r2 * _w_upper(p2 * scale, _COEF, _L)
             + r3 * _w_upper(p3 * scale, _COEF, _L))
    return 2.0 * (prefactor * total).real


_COND_LIMIT = 1e7


def detector_signal_array(d1, d2, d3, scheme: LadderScheme, target: RydbergTarget,
                          gain: float = 1.0, c3: float | None = None,
                          c2: float | None = None):
    """Vectorized detector signal (volts); broadcasts over the detunings.

    ``c3`` overrides the scheme's three-step contrast (0 drops the term, as
    in the two-beam reference cell); ``c2`` likewise for the two-step term.
    """
    d1, d2, d3 = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (d1, d2, d3)))
    lam = scheme.wavelengths
    sgn = scheme.signs
    a = scheme.velocity_halfwidths
    sigma = scheme.sigma_v
    v1 = sgn[0] * lam[0] * d1
    v2 = sgn[1] * lam[1] * d2
    v3 = sgn[2] * lam[2] * d3
    c2 = scheme.c2 if c2 is None else c2
    c3 = scheme.c3 if c3 is None else c3
    out = np.zeros(d1.shape)
    bad = np.zeros(d1.shape, dtype=bool)
    if c2:
        two, cond2 = cascade_integral(np.stack([v1, v2], axis=-1), a[:2], sigma)
        out = out + c2 * two
        bad |= ~(cond2 <= _COND_LIMIT)
    if c3:
        three, cond3 = cascade_integral(np.stack([v1, v2, v3], axis=-1), a, sigma)
        out = out + c3 * rydberg_amplitude(target) * three
        bad |= ~(cond3 <= _COND_LIMIT)
    if np.any(bad):
        shape = out.shape
        out = np.array(out, dtype=float).reshape(-1)
        flat = [np.reshape(x, -1) for x in (d1, d2, d3)]
        for i in np.flatnonzero(bad):
            out[i] = detector_signal(flat[0][i], flat[1][i], flat[2][i], scheme, target,
                                     gain=1.0, c3=c3, c2=c2)
        out = out.reshape(shape)
    return gain * out


# --- quadrature --------------------------------------------------------------

def _integrand(scheme, target, c2, c3, d1, d2, d3):
    lam = scheme.wavelengths
    sgn = scheme.signs
    sigma = scheme.sigma_v
    amp = c3 * rydberg_amplitude(target)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * sigma)
    g1, g2, g3 = scheme.gamma1, scheme.gamma2, scheme.gamma3

    def f(v):
        w = norm * math.exp(-0.5 * (v / sigma) ** 2)
        l1 = lorentzian(d1 - sgn[0] * v / lam[0], g1)
        l2 = lorentzian(d2 - sgn[1] * v / lam[1], g2)
        l3 = lorentzian(d3 - sgn[2] * v / lam[2], g3)
        return float(w * l1 * l2 * (c2 + amp * l3))

    return f


def detector_signal(d1: float, d2: float, d3: float, scheme: LadderScheme,
                    target: RydbergTarget, gain: float = 1.0,
                    c3: float | None = None, c2: float | None = None,
                    rtol: float = 1e-10) -> float:
    """Detector signal (volts) by adaptive quadrature over velocity.

    Raises :class:`QuadratureError` when ``quad`` does not reach ``rtol``.
    """
    for x in (d1, d2, d3):
        if not math.isfinite(x):
            raise ValueError("detunings must be finite")
    c2 = scheme.c2 if c2 is None else c2
    c3 = scheme.c3 if c3 is None else c3
    f = _integrand(scheme, target, c2, c3, d1, d2, d3)
    sigma = scheme.sigma_v
    lo, hi = -12.0 * sigma, 12.0 * sigma
    lam = scheme.wavelengths
    sgn = scheme.signs
    centers = sorted({float(sgn[i] * lam[i] * d) for i, d in enumerate((d1, d2, d3))})
    widths = scheme.velocity_halfwidths
    pts = []
    for cen in centers:
        for off in (-4 * widths.max(), 0.0, 4 * widths.max()):
            x = cen + off
            if lo < x < hi:
                pts.append(x)
    pts = sorted(set(pts))
    value, abserr, info = quad(f, lo, hi, points=pts, limit=2000, epsabs=0.0,
                               epsrel=rtol, full_output=1)[:3]
    if abserr > max(1e-6 * abs(value), 1e-300):
        raise QuadratureError(
            f"velocity quadrature did not converge: value={value:.6e}, "
            f"abserr={abserr:.3e}, evaluations={info['neval']}, "
            f"detunings=({d1:.6g}, {d2:.6g}, {d3:.6g}) Hz")
    return gain * value


def scan_lineshape(scheme: LadderScheme, target: RydbergTarget, axis: int,
                   span: float, fixed=(0.0, 0.0), npoints: int = 601,
                   gain: float = 1.0):
    """Detector signal along one detuning axis on ``[-span, +span]``.

    ``fixed`` holds the other two detunings in axis order.
    Returns ``(detuning, volts)``.
    """
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    if not span > 0:
        raise ValueError("scan range must be positive")
    if npoints < 51:
        raise ValueError("a scan needs at least 51 points")
    grid = np.linspace(-span, span, npoints)
    others = list(fixed)
    args = others[:axis - 1] + [grid] + others[axis - 1:]
    return grid, detector_signal_array(*args, scheme, target, gain=gain)
