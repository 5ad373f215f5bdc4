"""Experiment pipelines behind the command-line subcommands.

Each function takes a validated :class:`~rydlock.scenario.Scenario`, writes
its files into an output directory and returns an in-memory report, so the
same code serves the CLI and the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .allan import (AllanCurve, EstimationError, TransferFactor, cross_correlation,
                    octave_multiples, overlapping_adev, read_adev_csv, transfer_factor, write_adev_csv)
from .atomic import detector_signal_array, scan_lineshape
from .comb import CounterSeries, count_channels, read_counter_csv, write_counter_csv
from .lockin import calibrate_slope, static_error_curve
from .noise import NoiseSpec, write_trace_csv
from .scenario import Scenario
from .servo import ChainResult, ConfigError, run_locked_chain

__all__ = ["ScanReport", "RunReport", "TransferReport", "AdevReport", "scan", "run", "transfer",
           "adev", "SECOND_STEP_NOTE", "MIN_GATES_FOR_ADEV"]

MIN_GATES_FOR_ADEV = 100
TRANSFER_RECORD_DT = 1e-3
SECOND_STEP_NOTE = ("note: the laboratory measurement of the channel 2 to channel 3 transfer was "
                    "about 0.1x; the model value above comes from velocity selection alone and "
                    "is not expected to reproduce it")


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


def _write_kv(path: Path, items) -> None:
    with open(path, "w") as fh:
        for k, v in items:
            fh.write(f"{k} = {_fmt(v)}\n")


def _multiples(n: int, gate: float):
    """Octave averaging factors, plus tau = 1 s when the gate divides it."""
    ms = set(octave_multiples(n))
    m1 = round(1.0 / gate)
    if m1 >= 1 and abs(m1 * gate - 1.0) < 1e-9 and 3 * m1 <= n:
        ms.add(m1)
    return sorted(ms)


def _prepare(out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------- scan

@dataclass
class ScanReport:
    detuning: np.ndarray
    signal: np.ndarray
    error: np.ndarray
    zero_crossing: float
    slope: float
    calibration_gain: float
    capture_range: tuple
    warning: str | None
    files: list = field(default_factory=list)


_GNUPLOT = """\
# gnuplot script: lineshape and calibrated error signal
set datafile separator ","
set key top left
set xlabel "detuning (MHz)"
set multiplot layout 2,1
set ylabel "detector signal (V)"
plot "lineshape.csv" using ($1/1e6):2 skip 1 with lines title "{label} lineshape"
set ylabel "error signal (V)"
plot "error_curve.csv" using ($1/1e6):2 skip 1 with lines title "{label} error signal"
unset multiplot
"""


def scan(sc: Scenario, out) -> ScanReport:
    """Lineshape and calibrated error curve along the configured axis."""
    axis = sc.get("scan", "axis")
    span = sc.get("scan", "span_hz")
    npts = sc.get("scan", "points")
    ch = sc.chain.channels[axis - 1]
    if axis == 3:
        grid, volts = scan_lineshape(sc.scheme, sc.target, 3, span, npoints=npts)
        c3 = None
    else:
        grid = np.linspace(-span, span, npts)
        volts = detector_signal_array(0.0, grid, 0.0, sc.scheme, sc.target, c3=0.0)
        c3 = 0.0
    curve = static_error_curve(sc.scheme, sc.target, ch.dither, axis, grid, c3=c3)
    gain = calibrate_slope(curve, ch.error_slope)
    curve = curve.scaled(gain)
    report = ScanReport(grid, volts, curve.values, curve.zero_crossing, curve.slope_at_zero, gain,
                        curve.capture_range(), sc.target.warning)

    out = _prepare(out)
    with open(out / "lineshape.csv", "w") as fh:
        fh.write("detuning_hz,signal_v\n")
        np.savetxt(fh, np.column_stack([grid, volts]), fmt="%.17g", delimiter=",")
    with open(out / "error_curve.csv", "w") as fh:
        fh.write("detuning_hz,error_v\n")
        np.savetxt(fh, np.column_stack([grid, curve.values]), fmt="%.17g", delimiter=",")
    (out / "scan.gp").write_text(_GNUPLOT.format(label=sc.target.label))
    _write_kv(out / "scan_summary.txt", [
        ("scenario", sc.name), ("target", sc.target.label), ("axis", axis),
        ("warning", sc.target.warning or "none"),
        ("zero_crossing_hz", report.zero_crossing), ("slope_v_per_hz", report.slope),
        ("calibration_gain", gain), ("capture_low_hz", report.capture_range[0]),
        ("capture_high_hz", report.capture_range[1]),
    ])
    (out / "config.cfg").write_text(sc.echo())
    report.files = ["lineshape.csv", "error_curve.csv", "scan.gp", "scan_summary.txt", "config.cfg"]
    return report


# ----------------------------------------------------------------------------- run

@dataclass
class RunReport:
    result: ChainResult
    counter: CounterSeries
    adev: dict                      # label -> AllanCurve
    sigma_1s: dict                  # label -> float (nan if 1 s is not on the tau grid)
    sigma_max: dict                 # label -> max sigma for tau <= adev_max_tau_s
    correlations: dict
    lock_lost: bool
    notes: list = field(default_factory=list)


def run(sc: Scenario, out) -> RunReport:
    """Noise, servo chain, counter and Allan analysis for one scenario."""
    result = run_locked_chain(sc.chain, sc.scheme, sc.target)
    gate = sc.gate
    counter = count_channels(result.traces, gate, sc.get("counter", "beat_offset_hz"), sc.fm_error,
                             sc.fm_flags, seed=sc.seed)
    labels = counter.labels
    notes = []
    curves, s1, smax = {}, {}, {}
    tau_max = sc.get("analysis", "adev_max_tau_s")
    if sc.get("analysis", "adev"):
        if counter.readings.shape[0] < MIN_GATES_FOR_ADEV:
            notes.append(f"Allan deviation skipped: needs at least {MIN_GATES_FOR_ADEV} gates")
        else:
            for j, lab in enumerate(labels):
                c = overlapping_adev(counter.readings[:, j], gate, _multiples(counter.readings.shape[0], gate))
                curves[lab] = c
                try:
                    s1[lab] = c.at(1.0)
                except KeyError:
                    s1[lab] = math.nan
                smax[lab] = c.max_up_to(tau_max)
    corr = {}
    if sc.get("analysis", "correlation"):
        for a in range(3):
            for b in range(a + 1, 3):
                key = f"{labels[a]}_{labels[b]}"
                try:
                    corr[key] = cross_correlation(np.diff(counter.readings[:, a]),
                                                  np.diff(counter.readings[:, b]))
                except (EstimationError, ValueError):
                    corr[key] = math.nan
    if sc.target.warning:
        notes.append(f"warning: {sc.target.warning}")
    report = RunReport(result, counter, curves, s1, smax, corr, result.summary.lock_lost, notes)

    out = _prepare(out)
    for lab, tr in zip(labels, result.traces):
        write_trace_csv(tr, out / f"trace_{lab}.csv")
    write_counter_csv(counter, out / "counter.csv")
    for lab, c in curves.items():
        write_adev_csv(c, out / f"adev_{lab}.csv")
    items = [("scenario", sc.name), ("seed", sc.seed),
             ("warning", sc.target.warning or "none")]
    items += list(result.summary.items())
    items += [("counter.gate_s", gate), ("counter.fm_error_hz", sc.fm_error),
              ("counter.n_gates", counter.readings.shape[0])]
    for lab in curves:
        items.append((f"{lab}.adev_1s_hz", s1[lab]))
        items.append((f"{lab}.adev_max_hz", smax[lab]))
    items.append(("adev.max_tau_s", tau_max))
    for key, r in corr.items():
        items.append((f"correlation.{key}", r))
    for i, note in enumerate(notes):
        items.append((f"note.{i + 1}", note))
    _write_kv(out / "summary.txt", items)
    (out / "config.cfg").write_text(sc.echo())
    return report


# ----------------------------------------------------------------------------- transfer

@dataclass
class TransferReport:
    channel: int
    levels: np.ndarray
    offsets: np.ndarray            # (n_levels, 3) settled offsets
    kept: np.ndarray               # bool per level
    factors: dict                  # label -> TransferFactor
    notes: list = field(default_factory=list)


def _outside_tables(f, tables) -> bool:
    """Whether settled offsets ``f`` fall outside the lock-point table domain."""
    u = f[1] - tables.ratio12 * f[0]
    return bool(abs(f[0]) > tables.d1_grid[-1] or abs(u) > tables.u_grid[-1])


def transfer(sc: Scenario, out, channel: int | None = None, levels=None) -> TransferReport:
    """Sweep one lock point and fit how the downstream locks follow it.

    Every run is noise-free; the settled offset of each channel is the
    mean over the final ``transfer_settle_s``.  Levels where any lock is
    lost are excluded and listed in the report.
    """
    channel = sc.get("analysis", "transfer_channel") if channel is None else int(channel)
    if channel not in (1, 2):
        raise ConfigError("transfer sweeps channel 1 or 2")
    levels = np.asarray(sc.get("analysis", "transfer_levels_hz") if levels is None else levels,
                        dtype=float)
    if levels.size < 3 or np.unique(levels).size < 3:
        raise ConfigError("a transfer sweep needs at least three distinct levels")
    duration = sc.get("analysis", "transfer_duration_s")
    settle = sc.get("analysis", "transfer_settle_s")
    quiet = NoiseSpec()
    base = replace(sc.chain, duration=duration, record_dt=TRANSFER_RECORD_DT)
    for i in range(3):
        base = base.with_channel(i, noise=quiet, lock_noise=quiet)
    n_tail = max(1, int(round(settle / TRANSFER_RECORD_DT)))

    offsets = np.zeros((levels.size, 3))
    kept = np.ones(levels.size, dtype=bool)
    notes = []
    for k, level in enumerate(levels):
        cfg = base.with_channel(channel - 1, setpoint=float(level))
        res = run_locked_chain(cfg, sc.scheme, sc.target)
        offsets[k] = [tr.samples[-n_tail:].mean() for tr in res.traces]
        lost = [ch.label for ch in res.summary.channels
                if ch.engaged and (ch.lock_lost_at is not None or not ch.lock_acquired)]
        if lost:
            kept[k] = False
            notes.append(f"level {level:.6g} Hz excluded: lock lost on {', '.join(lost)}")
        elif _outside_tables(offsets[k], res.tables):
            kept[k] = False
            notes.append(f"level {level:.6g} Hz excluded: outside the precomputed lock-point tables")

    cause = offsets[kept, channel - 1]
    factors = {}
    for j in range(channel, 3):
        lab = f"ch{j + 1}"
        factors[lab] = transfer_factor(cause, offsets[kept, j])
    if channel == 2:
        notes.append(SECOND_STEP_NOTE)
    report = TransferReport(channel, levels, offsets, kept, factors, notes)

    out = _prepare(out)
    with open(out / "transfer.csv", "w") as fh:
        fh.write("level_hz,ch1_hz,ch2_hz,ch3_hz,kept\n")
        for lv, row, ok in zip(levels, offsets, kept):
            fh.write(",".join(_fmt(x) for x in (lv, *row)) + f",{int(ok)}\n")
    items = [("scenario", sc.name), ("swept_channel", f"ch{channel}"),
             ("levels_used", int(kept.sum()))]
    for lab, tf in factors.items():
        items += [(f"ch{channel}_to_{lab}.slope", tf.slope),
                  (f"ch{channel}_to_{lab}.ci_low", tf.ci_low),
                  (f"ch{channel}_to_{lab}.ci_high", tf.ci_high)]
    for i, note in enumerate(notes):
        items.append((f"note.{i + 1}", note))
    _write_kv(out / "transfer_report.txt", items)
    (out / "config.cfg").write_text(sc.echo())
    return report


# ----------------------------------------------------------------------------- adev

@dataclass
class AdevReport:
    curves: dict
    sigma_1s: dict


def adev(counter_path, out, tau_max: float = 1e3) -> AdevReport:
    """Allan deviation of every channel in an existing counter CSV."""
    series = read_counter_csv(counter_path)
    curves, s1 = {}, {}
    for j, lab in enumerate(series.labels):
        c = overlapping_adev(series.readings[:, j], series.gate,
                              _multiples(series.readings.shape[0], series.gate))
        curves[lab] = c
        try:
            s1[lab] = c.at(1.0)
        except KeyError:
            s1[lab] = math.nan
    out = _prepare(out)
    items = [("source", Path(counter_path).name), ("gate_s", series.gate),
             ("n_gates", series.readings.shape[0])]
    for lab, c in curves.items():
        write_adev_csv(c, out / f"adev_{lab}.csv")
        items += [(f"{lab}.adev_1s_hz", s1[lab]), (f"{lab}.adev_max_hz", c.max_up_to(tau_max))]
    _write_kv(out / "adev_summary.txt", items)
    return AdevReport(curves, s1)


def load_adev(path) -> AllanCurve:
    return read_adev_csv(path)


def describe_transfer(tf: TransferFactor) -> str:
    return f"{tf.slope:.6f} (95% CI {tf.ci_low:.6f} .. {tf.ci_high:.6f}, n={tf.n})"
