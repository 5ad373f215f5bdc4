"""Frequency-stability analysis of counter readings."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "AllanCurve",
    "TransferFactor",
    "EstimationError",
    "overlapping_adev",
    "octave_multiples",
    "transfer_factor",
    "cross_correlation",
    "write_adev_csv",
    "read_adev_csv",
]


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class AllanCurve:
    taus: np.ndarray
    sigmas: np.ndarray
    n_pairs: np.ndarray

    def at(self, tau: float) -> float:
        i = np.nonzero(np.isclose(self.taus, tau, rtol=1e-9, atol=0))[0]
        if i.size == 0:
            raise KeyError(f"tau={tau!r} not in curve")
        return float(self.sigmas[i[0]])

    def max_up_to(self, tau_max: float) -> float:
        mask = self.taus <= tau_max * (1 + 1e-12)
        return float(self.sigmas[mask].max())


def octave_multiples(n: int, max_fraction: float = 1.0 / 3.0):
    """1, 2, 4, ... up to ``n * max_fraction``."""
    out = []
    m = 1
    while m <= n * max_fraction:
        out.append(m)
        m *= 2
    return out


def overlapping_adev(readings, gate: float, multiples=None, detrend: bool = False) -> AllanCurve:
    """Overlapping Allan deviation of gated frequency readings, in Hz.

    ``multiples`` are the averaging factors m (tau = m * gate); by default
    octaves up to a third of the record.  Factors with fewer than ``3 m``
    readings are dropped with a warning.
    """
    y = np.asarray(readings, dtype=float)
    n = y.size
    if not gate > 0:
        raise ValueError("gate must be positive")
    if detrend and n >= 2:
        k = np.arange(n)
        y = y - np.polyval(np.polyfit(k, y, 1), k)
    if multiples is None:
        multiples = octave_multiples(n)
    multiples = sorted({int(m) for m in multiples})
    # centre first so cumulative sums stay small (offset invariance)
    y = y - y.mean() if n else y
    csum = np.concatenate(([0.0], np.cumsum(y)))
    taus, sigmas, pairs = [], [], []
    for m in multiples:
        if m < 1:
            raise ValueError("averaging factors must be >= 1")
        if n < 3 * m:
            warnings.warn(f"tau={m * gate:g} s omitted: {n} readings < 3*{m}",
                          RuntimeWarning, stacklevel=2)
            continue
        means = (csum[m:] - csum[:-m]) / m  # ybar_i for i = 0..n-m
        d = means[m:] - means[:-m]          # ybar_{i+m} - ybar_i, i = 0..n-2m
        npair = d.size
        # normalize before squaring so tiny or huge scales neither under- nor overflow
        peak = np.abs(d).max()
        u = d / peak if peak > 0 else d
        sigmas.append(float(peak) * math.sqrt(np.dot(u, u) / (2.0 * npair)))
        taus.append(m * gate)
        pairs.append(npair)
    return AllanCurve(np.array(taus), np.array(sigmas), np.array(pairs, dtype=int))


@dataclass(frozen=True)
class TransferFactor:
    slope: float
    ci_low: float
    ci_high: float
    intercept: float
    n: int

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low


def transfer_factor(cause, effect, confidence: float = 0.95) -> TransferFactor:
    """Least-squares slope of ``effect`` against ``cause`` with a t-based CI."""
    x = np.asarray(cause, dtype=float)
    y = np.asarray(effect, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise EstimationError("cause and effect must be equal-length 1-D arrays")
    if np.unique(x).size < 3:
        raise EstimationError("need at least three distinct cause levels")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if not sxx > 0:
        raise EstimationError("cause has no variance")
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    dof = x.size - 2
    se = math.sqrt(np.sum(resid ** 2) / dof / sxx)
    half = stats.t.ppf(0.5 + confidence / 2.0, dof) * se
    return TransferFactor(float(slope), float(slope - half), float(slope + half),
                          float(intercept), int(x.size))


def cross_correlation(a, b) -> float:
    """Pearson correlation of two equal-length reading series."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 10:
        raise EstimationError("need two equal-length series of at least 10 readings")
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = np.dot(a, a), np.dot(b, b)
    if saa == 0 or sbb == 0:
        raise EstimationError("correlation undefined for a constant series")
    r = np.dot(a, b) / math.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))


def write_adev_csv(curve: AllanCurve, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("tau_s,sigma_hz,n_pairs\n")
        for t, s, p in zip(curve.taus, curve.sigmas, curve.n_pairs):
            fh.write(f"{t:.17g},{s:.17g},{int(p)}\n")


def read_adev_csv(path) -> AllanCurve:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["tau_s", "sigma_hz", "n_pairs"]:
        raise ValueError(f"unexpected header {rows[0]!r}")
    data = rows[1:]
    return AllanCurve(np.array([float(r[0]) for r in data]),
                      np.array([float(r[1]) for r in data]),
                      np.array([int(r[2]) for r in data]))
