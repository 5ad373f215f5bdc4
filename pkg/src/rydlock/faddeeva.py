"""Faddeeva function w(z) = exp(-z**2) erfc(-iz).

Vectorized code uses :func:`scipy.special.wofz`.  Inside compiled kernels
we use Weideman's rational approximation (SIAM J. Numer. Anal. 31, 1994),
valid for Im z >= 0, which is the only half-plane the cascade integrals
need.
"""

import numpy as np
from scipy.special import wofz

from ._accel import jit

__all__ = ["wofz", "weideman_coefficients", "w_upper", "WEIDEMAN_N"]

WEIDEMAN_N = 36


def weideman_coefficients(n=WEIDEMAN_N):
    """Polynomial coefficients (highest power first) and the scale L."""
    m = 2 * n
    m2 = 2 * m
    k = np.arange(-m + 1, m)
    scale = np.sqrt(n / np.sqrt(2.0))
    theta = k * np.pi / m
    t = scale * np.tan(theta / 2.0)
    f = np.exp(-t * t) * (scale * scale + t * t)
    f = np.concatenate(([0.0], f))
    a = np.real(np.fft.fft(np.fft.fftshift(f))) / m2
    a = a[1:n + 1][::-1].copy()
    return a, scale


_COEF, _L = weideman_coefficients()
_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)


@jit
def _w_upper(z, coef, scale):
    denom = scale - 1j * z
    zz = (scale + 1j * z) / denom
    p = 0.0 + 0.0j
    for c in coef:
        p = p * zz + c
    return 2.0 * p / (denom * denom) + _INV_SQRT_PI / denom


def w_upper(z):
    """Scalar Faddeeva function for Im z >= 0 (compiled when available)."""
    return _w_upper(complex(z), _COEF, _L)
