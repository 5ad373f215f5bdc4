"""Closed-loop simulation of the three-laser chain."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..atomic import LadderScheme, RydbergTarget, rydberg_amplitude, QUANTUM_DEFECTS
from ..lockin import DEFAULT_SLOPE
from ..noise import FrequencyTrace, NoiseStream
from . import kernels
from .config import ConfigError, ServoChainConfig
from .discriminators import build_tables

__all__ = ["ChainResult", "ChannelSummary", "RunSummary", "run_locked_chain", "CHUNK_STEPS"]

CHUNK_STEPS = 1 << 18
LABELS = ("ch1", "ch2", "ch3")
_REFERENCE_TARGET = RydbergTarget(50, "F7/2", QUANTUM_DEFECTS["F7/2"])


@dataclass
class ChannelSummary:
    label: str
    engaged: bool
    lock_acquired: bool
    lock_lost_at: float | None
    saturation: dict
    integrator_saturation: dict
    rms_error_v: float
    mean_offset_hz: float

    @property
    def locked(self) -> bool:
        return self.engaged and self.lock_acquired and self.lock_lost_at is None


@dataclass
class RunSummary:
    mode: str
    dt: float
    duration: float
    target: str
    channels: list = field(default_factory=list)
    table_clamped: bool = False  # laser 1 or 2 left the precomputed lock-point tables

    @property
    def lock_lost(self) -> bool:
        return any(ch.lock_lost_at is not None for ch in self.channels)

    def items(self):
        """Flat ``(key, value)`` pairs for the summary file."""
        yield "mode", self.mode
        yield "dt_s", repr(float(self.dt))
        yield "duration_s", repr(float(self.duration))
        yield "target", self.target
        yield "lock_lost", str(self.lock_lost).lower()
        yield "table_clamped", str(self.table_clamped).lower()
        for ch in self.channels:
            p = ch.label
            yield f"{p}.engaged", str(ch.engaged).lower()
            yield f"{p}.lock_acquired", str(ch.lock_acquired).lower()
            yield f"{p}.lock_lost_at_s", "none" if ch.lock_lost_at is None else repr(ch.lock_lost_at)
            for kind, frac in ch.saturation.items():
                yield f"{p}.{kind}_saturation_fraction", repr(frac)
            for kind, frac in ch.integrator_saturation.items():
                yield f"{p}.{kind}_integrator_saturation_fraction", repr(frac)
            yield f"{p}.rms_error_v", repr(float(ch.rms_error_v))
            yield f"{p}.mean_offset_hz", repr(float(ch.mean_offset_hz))


@dataclass
class ChainResult:
    traces: tuple          # FrequencyTrace per channel (block means at record_dt)
    errors: tuple          # filtered error signal per channel, same sampling (V)
    summary: RunSummary
    tables: object = None


def _pack_loops(config: ServoChainConfig, dt: float):
    pid = np.zeros((3, 2, 4))
    act = np.zeros((3, 2, 4))
    for c, ch in enumerate(config.channels):
        for loop in ch.loops:
            a = 0 if loop.actuator.kind == "piezo" else 1
            g = loop.gains
            pid[c, a] = (g.kp, g.ki, g.kd, g.integrator_limit)
            act[c, a] = (loop.actuator.gain, -math.expm1(-2 * math.pi * loop.actuator.bandwidth * dt),
                         loop.actuator.range, 1.0)
    return pid, act


def _wave_params(scheme, target, tables, config, slope2, slope3):
    ch2, ch3 = config.channels[1], config.channels[2]
    d2, d3 = ch2.dither, ch3.dither
    lam, sgn = scheme.wavelengths, scheme.signs
    a = scheme.velocity_halfwidths
    spread = np.abs(np.subtract.outer(a, a))[np.triu_indices(3, 1)] / a.max()
    if np.any(spread < 0.02):
        raise ConfigError("waveform mode needs distinct velocity widths for the three steps")
    return np.array([
        d2.amplitude, d2.f_mod, d2.phase, d3.amplitude, d3.f_mod, d3.phase,
        tables.gain2_v * slope2, tables.gain3_v * slope3,
        scheme.c2, scheme.c3 * rydberg_amplitude(target),
        sgn[0] * lam[0], sgn[1] * lam[1], sgn[2] * lam[2],
        a[0], a[1], a[2], scheme.sigma_v,
        1.0 if ch2.dither_enabled else 0.0, 1.0 if ch3.dither_enabled else 0.0,
    ])


def run_locked_chain(config: ServoChainConfig, scheme: LadderScheme,
                     target: RydbergTarget) -> ChainResult:
    """Simulate the three locks and return per-channel frequency traces.

    Laser 1 locks to its own reference (a dispersive curve of configurable
    width), laser 2 to the two-step peak in the reference cell, which
    depends on lasers 1 and 2, and laser 3 to the detection-cell Rydberg
    signal, which depends on all three.  Envelope mode evaluates the
    calibrated static error curves directly; waveform mode applies the
    dither and demodulates sample by sample.
    """
    config.validate()
    dt = config.step
    rec_every = int(round(config.record_step / dt))
    n_steps = int(round(config.duration / dt))
    n_steps -= n_steps % rec_every
    n_rec = n_steps // rec_every

    ch1, ch2, ch3 = config.channels
    tables = build_tables(scheme, target, ch2.dither, ch3.dither)
    s2 = ch2.error_slope / DEFAULT_SLOPE
    s3 = ch3.error_slope / DEFAULT_SLOPE
    e2 = tables.e2 * s2
    e3 = tables.e3 * s3
    tp = np.array([tables.e2_grid[0], tables.e2_grid[1] - tables.e2_grid[0],
                   tables.e3_grid[0], tables.e3_grid[1] - tables.e3_grid[0],
                   tables.d1_grid[0], tables.d1_grid[1] - tables.d1_grid[0],
                   tables.u_grid[0], tables.u_grid[1] - tables.u_grid[0],
                   tables.ratio12, ch1.error_slope, ch1.discriminator_width])
    capture = np.array([[-ch1.discriminator_width, ch1.discriminator_width],
                        list(tables.capture2), list(tables.capture3)])
    sp = np.array([ch.setpoint for ch in config.channels])
    engage_at = np.array([int(round(ch.engage_delay / dt)) if ch.engaged else -1
                          for ch in config.channels], dtype=np.int64)
    lp_alpha = np.array([1.0] + [-math.expm1(-dt / ch.dither.tau_lp) for ch in (ch2, ch3)])
    lp_order = np.array([1, ch2.dither.lp_order, ch3.dither.lp_order], dtype=np.int64)
    if lp_order.max() > kernels.MAX_LP_ORDER:
        raise ConfigError(f"lock-in order above {kernels.MAX_LP_ORDER} is not supported")
    pid, act = _pack_loops(config, dt)
    hold_steps = int(round(config.lock_loss_hold / dt))

    noise_scale = [1.0, 1.0, 1.0]
    if config.scale_detection_noise:
        noise_scale[2] = rydberg_amplitude(_REFERENCE_TARGET) / rydberg_amplitude(target)
    free_streams = [NoiseStream(ch.noise, dt, n_steps, stream_key=(c, 0))
                    for c, ch in enumerate(config.channels)]
    lock_streams = [NoiseStream(ch.lock_noise, dt, n_steps, stream_key=(c, 1))
                    for c, ch in enumerate(config.channels)]
    offsets = np.array([ch.static_offset for ch in config.channels])

    fst = np.zeros(24 + 3 * kernels.MAX_LP_ORDER)
    ist = np.zeros((3, 5), dtype=np.int64)
    ist[:, 2] = -1
    counts = np.zeros((3, 4), dtype=np.int64)
    esq = np.zeros(3)
    rec_f = np.zeros((3, n_rec))
    rec_e = np.zeros((3, n_rec))

    if config.mode == "waveform":
        wf = _wave_params(scheme, target, tables, config, s2, s3)
        kernel = kernels.waveform_chunk
        extra = (wf,)
    else:
        kernel = kernels.envelope_chunk
        extra = ()

    chunk = rec_every * max(1, CHUNK_STEPS // rec_every)
    done = 0
    while done < n_steps:
        n = min(chunk, n_steps - done)
        free = np.empty((3, n))
        lockn = np.empty((3, n))
        for c in range(3):
            free[c] = free_streams[c].take(n) + offsets[c]
            lockn[c] = lock_streams[c].take(n) * noise_scale[c]
        r0 = done // rec_every
        out_f = np.zeros((3, n // rec_every))
        out_e = np.zeros((3, n // rec_every))
        kernel(done, dt, rec_every, free, lockn, sp, tp, e2, e3, tables.shift2, tables.shift3,
               tables.gain3, pid, act, lp_alpha, lp_order, engage_at, capture, hold_steps,
               fst, ist, counts, esq, out_f, out_e, *extra)
        rec_f[:, r0:r0 + n // rec_every] = out_f
        rec_e[:, r0:r0 + n // rec_every] = out_e
        done += n

    record_dt = rec_every * dt
    traces = tuple(FrequencyTrace(record_dt, rec_f[c], f"{LABELS[c]} locked ({config.mode})")
                   for c in range(3))
    summary = RunSummary(config.mode, dt, n_steps * dt, target.label)
    u = rec_f[1] - tables.ratio12 * rec_f[0]
    summary.table_clamped = bool(np.any(np.abs(rec_f[0]) > tables.d1_grid[-1])
                                 or np.any(np.abs(u) > tables.u_grid[-1]))
    for c, ch in enumerate(config.channels):
        kinds = ch.actuator_kinds
        slot = {"piezo": 0, "current": 1}
        sat = {k: float(counts[c, slot[k]] / n_steps) for k in kinds}
        isat = {k: float(counts[c, 2 + slot[k]] / n_steps) for k in kinds}
        nerr = ist[c, 4]
        summary.channels.append(ChannelSummary(
            label=LABELS[c],
            engaged=ch.engaged,
            lock_acquired=bool(ist[c, 3]),
            lock_lost_at=None if ist[c, 2] < 0 else round(float(ist[c, 2] * dt), 12),
            saturation=sat,
            integrator_saturation=isat,
            rms_error_v=math.sqrt(esq[c] / nerr) if nerr else 0.0,
            mean_offset_hz=float(rec_f[c].mean()),
        ))
    return ChainResult(traces, tuple(rec_e[c].copy() for c in range(3)), summary, tables)
