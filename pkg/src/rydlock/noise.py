"""Seeded free-running laser frequency noise.

One-sided frequency-noise PSD conventions (offset frequency ``f``):

* white FM        S(f) = h0                 [Hz^2/Hz]
* flicker FM      S(f) = h_flicker / f      [Hz^2]
* random-walk FM  S(f) = h_rw / f^2         [Hz^3]

Each component draws from its own substream of the master seed, so
switching one component on or off leaves the others' samples unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy.signal import sosfilt

__all__ = [
    "NoiseSpec",
    "FrequencyTrace",
    "NoiseStream",
    "InvalidSpecError",
    "ShapeError",
    "FLICKER_ORDER",
    "synth_power_law_noise",
    "add_drift",
    "compose",
    "write_trace_csv",
    "read_trace_csv",
]

FLICKER_ORDER = 15

_WHITE, _FLICKER, _RANDOM_WALK = 0, 1, 2


class InvalidSpecError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    h0: float = 0.0
    h_flicker: float = 0.0
    h_rw: float = 0.0
    drift_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("h0", "h_flicker", "h_rw"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidSpecError(f"{name} must be finite and >= 0, got {value!r}")
        if not math.isfinite(self.drift_rate):
            raise InvalidSpecError("drift_rate must be finite")
        if int(self.seed) != self.seed or self.seed < 0:
            raise InvalidSpecError("seed must be a non-negative integer")

    @property
    def is_zero(self) -> bool:
        return not (self.h0 or self.h_flicker or self.h_rw or self.drift_rate)

    def scaled(self, factor: float) -> "NoiseSpec":
        """Same seed, every amplitude multiplied by ``factor``."""
        f2 = factor * factor
        return NoiseSpec(self.h0 * f2, self.h_flicker * f2, self.h_rw * f2,
                         self.drift_rate * factor, self.seed)


class FrequencyTrace:
    """Uniformly sampled frequency offset (Hz) from a nominal optical frequency."""

    __slots__ = ("dt", "samples", "origin")

    def __init__(self, dt, samples, origin=""):
        samples = np.array(samples, dtype=float)
        if not (math.isfinite(dt) and dt > 0):
            raise ShapeError("dt must be positive")
        if samples.ndim != 1 or samples.size < 2:
            raise ShapeError("a trace needs at least two samples")
        samples.setflags(write=False)
        self.dt = float(dt)
        self.samples = samples
        self.origin = origin

    def __len__(self):
        return self.samples.size

    def __repr__(self):
        return f"FrequencyTrace(dt={self.dt!r}, n={len(self)}, origin={self.origin!r})"

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self))

    @property
    def duration(self) -> float:
        return self.dt * len(self)

    def __neg__(self):
        return FrequencyTrace(self.dt, -self.samples, f"-({self.origin})")


def _flicker_sos(dt, n_total, order=FLICKER_ORDER):
    """Pole-zero cascade approximating a half-order integrator.

    ``order`` interleaved real pole/zero pairs, log-spaced between the
    inverse record length and Nyquist, give a -10 dB/decade power slope.
    Returns ``(sos, gain)`` with the gain fixed so the output PSD is 1/f
    on average over the band for unit-variance white input.
    """
    f_hi = 0.5 / dt
    f_lo = min(1.0 / (n_total * dt), f_hi / 100.0)
    ratio = (f_hi / f_lo) ** (1.0 / order)
    poles = f_lo * ratio ** np.arange(order)
    zeros = poles * math.sqrt(ratio)
    zp = np.exp(-2 * np.pi * poles * dt)
    zz = np.exp(-2 * np.pi * zeros * dt)
    sos = np.zeros((order, 6))
    sos[:, 0] = 1.0
    sos[:, 1] = -zz
    sos[:, 3] = 1.0
    sos[:, 4] = -zp
    f = np.geomspace(f_lo * ratio, f_hi / ratio ** 2, 256)
    e = np.exp(-2j * np.pi * f * dt)
    h2 = np.prod(np.abs((1 - zz[:, None] * e) / (1 - zp[:, None] * e)) ** 2, axis=0)
    # unit-variance white input has one-sided PSD 2*dt
    level = np.exp(np.mean(np.log(2 * dt * h2 * f)))
    return sos, 1.0 / math.sqrt(level)


class NoiseStream:
    """Chunked generator for a NoiseSpec; ``take`` continues where it left off.

    ``n_total`` fixes the low-frequency corner of the flicker filter, so a
    stream read in pieces is bit-identical to one read at once.
    ``stream_key`` prefixes the seed spawn key so several independent
    streams can share one seed.
    """

    def __init__(self, spec: NoiseSpec, dt: float, n_total: int, stream_key: tuple = ()):
        if not (math.isfinite(dt) and dt > 0):
            raise InvalidSpecError("dt must be positive")
        if n_total < 2:
            raise InvalidSpecError("need at least two samples")
        self.spec = spec
        self.dt = float(dt)
        self.n_total = int(n_total)
        self.position = 0
        ss = lambda k: np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=tuple(stream_key) + (k,)))
        self._white = ss(_WHITE) if spec.h0 else None
        self._flicker = ss(_FLICKER) if spec.h_flicker else None
        self._rw = ss(_RANDOM_WALK) if spec.h_rw else None
        if self._flicker is not None:
            self._sos, gain = _flicker_sos(self.dt, self.n_total)
            self._flicker_scale = gain * math.sqrt(spec.h_flicker)
            self._zi = np.zeros((FLICKER_ORDER, 2))
        self._rw_level = 0.0

    def take(self, n: int) -> np.ndarray:
        spec, dt = self.spec, self.dt
        out = np.zeros(n)
        if n == 0:
            return out
        if self._white is not None:
            out += math.sqrt(spec.h0 / (2.0 * dt)) * self._white.standard_normal(n)
        if self._flicker is not None:
            y, self._zi = sosfilt(self._sos, self._flicker.standard_normal(n), zi=self._zi)
            out += self._flicker_scale * y
        if self._rw is not None:
            steps = math.sqrt(2.0 * math.pi ** 2 * spec.h_rw * dt) * self._rw.standard_normal(n)
            # seed the running sum with the carried level: same rounding as one pass
            steps[0] += self._rw_level
            walk = np.cumsum(steps)
            self._rw_level = walk[-1]
            out += walk
        if spec.drift_rate:
            out += spec.drift_rate * (dt * np.arange(self.position, self.position + n))
        self.position += n
        return out


def synth_power_law_noise(spec: NoiseSpec, dt: float, n: int) -> FrequencyTrace:
    """Free-running frequency trace with the power-law content of ``spec``."""
    if n < 2 or not dt > 0:
        raise InvalidSpecError("need n >= 2 and dt > 0")
    samples = NoiseStream(spec, dt, n).take(n)
    return FrequencyTrace(dt, samples, f"power-law noise {spec}")


def add_drift(trace: FrequencyTrace, rate: float) -> FrequencyTrace:
    """Add a linear ramp ``rate * k * dt`` to a trace."""
    if not math.isfinite(rate):
        raise InvalidSpecError("drift rate must be finite")
    ramp = rate * (trace.dt * np.arange(len(trace)))
    return FrequencyTrace(trace.dt, trace.samples + ramp,
                          f"{trace.origin} + drift {rate:g} Hz/s")


def compose(traces) -> FrequencyTrace:
    """Elementwise sum of traces sharing dt and length.

    Values at each sample are summed in sorted order, so the result does
    not depend on the order of ``traces``.
    """
    traces = list(traces)
    if not traces:
        raise ShapeError("nothing to compose")
    dt, n = traces[0].dt, len(traces[0])
    for tr in traces[1:]:
        if tr.dt != dt or len(tr) != n:
            raise ShapeError("composed traces must share dt and length")
    if len(traces) == 1:
        return traces[0]
    stack = np.sort(np.stack([tr.samples for tr in traces]), axis=0)
    total = reduce(np.add, stack)
    return FrequencyTrace(dt, total, " + ".join(tr.origin for tr in traces))


def write_trace_csv(trace: FrequencyTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t_s,offset_hz\n")
        data = np.column_stack([trace.times, trace.samples])
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_trace_csv(path, origin=None) -> FrequencyTrace:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
        if header != ["t_s", "offset_hz"]:
            raise ShapeError(f"unexpected trace header {header!r}")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    t, y = data[:, 0], data[:, 1]
    dt = float(t[1] - t[0])
    return FrequencyTrace(dt, y, origin or str(path))
