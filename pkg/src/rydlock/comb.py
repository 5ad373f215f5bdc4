"""Comb beat-note detection and synchronized gated frequency counting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .noise import FrequencyTrace

__all__ = [
    "CounterSeries",
    "CounterConfigError",
    "SynchronizationError",
    "beat_trace",
    "gated_readings",
    "count_channels",
    "synchronize",
    "write_counter_csv",
    "read_counter_csv",
    "DEFAULT_BEAT_HZ",
]

DEFAULT_BEAT_HZ = 20e6


class CounterConfigError(ValueError):
    pass


class SynchronizationError(ValueError):
    pass


def beat_trace(laser: FrequencyTrace, nominal_offset: float = DEFAULT_BEAT_HZ,
               comb: FrequencyTrace | None = None) -> FrequencyTrace:
    """Beat frequency against the chosen comb line: ``|f0 + laser - comb|``.

    ``comb`` is an optional comb-line noise trace (the comb is treated as
    exact otherwise).
    """
    if not nominal_offset >= 0:
        raise CounterConfigError("nominal beat offset must be >= 0")
    offset = laser.samples
    if comb is not None:
        if comb.dt != laser.dt or len(comb) != len(laser):
            raise CounterConfigError("comb noise trace must match the laser trace")
        offset = offset - comb.samples
    return FrequencyTrace(laser.dt, np.abs(nominal_offset + offset),
                          f"beat({laser.origin})")


def _samples_per_gate(dt, gate):
    if not gate > 0:
        raise CounterConfigError("gate must be positive")
    k = int(round(gate / dt))
    if k < 1 or abs(k * dt - gate) > 1e-9 * gate:
        raise CounterConfigError(f"gate {gate:g} s is not an integer multiple of dt={dt:g} s")
    return k


def gated_readings(beat: FrequencyTrace, gate: float, fm_error: float = 0.0,
                   seed: int | np.random.SeedSequence = 0) -> np.ndarray:
    """Pi-type counter: mean beat frequency over consecutive gates.

    With ``fm_error > 0`` each reading gets an independent error drawn
    uniformly from ``[-fm_error, fm_error]``.  A partial final gate is
    discarded.
    """
    k = _samples_per_gate(beat.dt, gate)
    ngates = len(beat) // k
    if ngates < 2:
        raise CounterConfigError("trace shorter than two gates")
    if not (math.isfinite(fm_error) and fm_error >= 0):
        raise CounterConfigError("fm_error must be >= 0")
    readings = beat.samples[:ngates * k].reshape(ngates, k).mean(axis=1)
    if fm_error > 0:
        rng = np.random.default_rng(seed)
        readings = readings + rng.uniform(-fm_error, fm_error, ngates)
    return readings


@dataclass(frozen=True)
class CounterSeries:
    gate: float
    t0: float
    readings: np.ndarray  # shape (n_gates, n_channels)
    labels: tuple
    fm_flags: tuple

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + self.gate * np.arange(self.readings.shape[0])

    def channel(self, label) -> np.ndarray:
        return self.readings[:, self.labels.index(label)]


def synchronize(readings, gate: float, t0: float = 0.0, labels=None,
                fm_flags=None) -> CounterSeries:
    """Join per-channel readings into one table on shared timestamps."""
    readings = [np.asarray(r, dtype=float) for r in readings]
    if not readings:
        raise SynchronizationError("no channels")
    lengths = {r.size for r in readings}
    if len(lengths) != 1:
        raise SynchronizationError(f"channels have different reading counts {sorted(lengths)}")
    if not gate > 0:
        raise CounterConfigError("gate must be positive")
    n = len(readings)
    labels = tuple(labels) if labels is not None else tuple(f"ch{i + 1}" for i in range(n))
    fm_flags = tuple(bool(f) for f in fm_flags) if fm_flags is not None else (False,) * n
    if len(labels) != n or len(fm_flags) != n:
        raise SynchronizationError("labels/fm_flags do not match channel count")
    return CounterSeries(float(gate), float(t0), np.column_stack(readings), labels, fm_flags)


def count_channels(traces, gate: float, nominal_offset: float = DEFAULT_BEAT_HZ,
                   fm_error: float = 0.0, fm_flags=(False, True, True), seed: int = 0,
                   t0: float = 0.0) -> CounterSeries:
    """Beat, gate and synchronize several laser traces.

    Channel ``i`` draws its counting errors from substream ``i`` of ``seed``.
    """
    fm_flags = tuple(fm_flags)[:len(traces)]
    out = []
    for i, (tr, flagged) in enumerate(zip(traces, fm_flags)):
        sub = np.random.SeedSequence(seed, spawn_key=(i,))
        out.append(gated_readings(beat_trace(tr, nominal_offset), gate,
                                  fm_error if flagged else 0.0, sub))
    return synchronize(out, gate, t0, fm_flags=fm_flags)


def write_counter_csv(series: CounterSeries, path) -> None:
    header = ["t_s"] + [f"{lab}_hz" for lab in series.labels]
    data = np.column_stack([series.timestamps, series.readings])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, fmt="%.17g", delimiter=",")


def read_counter_csv(path) -> CounterSeries:
    with open(path, newline="") as fh:
        header = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if not header or header[0] != "t_s" or not all(h.endswith("_hz") for h in header[1:]):
        raise ValueError(f"unexpected counter header {header!r}")
    if data.shape[0] < 2:
        raise ValueError("counter file needs at least two readings")
    t = data[:, 0]
    gate = float(t[1] - t[0])
    labels = tuple(h[:-3] for h in header[1:])
    return CounterSeries(gate, float(t[0]), data[:, 1:], labels, (False,) * len(labels))
