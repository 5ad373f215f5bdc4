"""Single-loop building blocks and discrete-time loop analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Actuator, ChannelConfig, ENVELOPE_DT, PidGains
from .kernels import actuator_step, pid_step

__all__ = ["PidState", "ActuatorState", "pid_update", "actuator_response", "LoopMargins",
           "open_loop_response", "loop_margins"]


@dataclass(frozen=True)
class PidState:
    integrator: float = 0.0
    last_error: float = 0.0
    clamped: bool = False


@dataclass(frozen=True)
class ActuatorState:
    correction: float = 0.0
    saturated: bool = False


def pid_update(state: PidState, error: float, gains: PidGains, dt: float):
    """Advance a PID controller by one sample.

    Returns
    -------
    command : float
        Controller output in volts.
    state : PidState
        Updated state; ``clamped`` reports whether the integrator hit its limit.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    integ, cmd, clamped = pid_step(state.integrator, state.last_error, float(error), gains.kp,
                                   gains.ki, gains.kd, gains.integrator_limit, dt)
    return cmd, PidState(integ, float(error), bool(clamped))


def actuator_response(command: float, actuator: Actuator, state: ActuatorState, dt: float):
    """Frequency correction (Hz) after one sample of ``command`` volts."""
    alpha = -math.expm1(-2.0 * math.pi * actuator.bandwidth * dt)
    y, sat = actuator_step(state.correction, float(command), actuator.gain, alpha, actuator.range)
    return y, ActuatorState(y, bool(sat))


@dataclass(frozen=True)
class LoopMargins:
    crossover_hz: float
    phase_margin_deg: float
    gain_margin_db: float


def open_loop_response(channel: ChannelConfig, freqs, dt: float = ENVELOPE_DT,
                       slope: float | None = None, lockin: bool = True):
    """Discrete open-loop transfer function ``L(f)`` of one lock.

    Includes the one-sample loop delay, the lock-in low-pass (when the
    channel has a dither and ``lockin`` is set), every PID and every
    actuator pole.  The loop is stable with margin when ``1 + L`` stays
    away from zero.
    """
    f = np.asarray(freqs, dtype=float)
    zi = np.exp(-2j * np.pi * f * dt)  # z^-1
    k = channel.error_slope if slope is None else slope
    h = k * zi
    if lockin and channel.dither is not None:
        a = -math.expm1(-dt / channel.dither.tau_lp)
        h = h * (a / (1 - (1 - a) * zi)) ** channel.dither.lp_order
    total = np.zeros_like(zi)
    for loop in channel.loops:
        g = loop.gains
        c = g.kp + g.ki * g.kp * dt / (1 - zi) + g.kd * (1 - zi) / dt
        al = -math.expm1(-2 * math.pi * loop.actuator.bandwidth * dt)
        total = total + c * al * loop.actuator.gain / (1 - (1 - al) * zi)
    return h * total


def loop_margins(channel: ChannelConfig, dt: float = ENVELOPE_DT, slope: float | None = None,
                 lockin: bool = True, npoints: int = 20000) -> LoopMargins:
    """Unity-gain crossover, phase margin and gain margin of one lock."""
    f = np.logspace(-1, math.log10(0.5 / dt), npoints)
    L = open_loop_response(channel, f, dt, slope, lockin)
    mag = np.abs(L)
    phase = np.unwrap(np.angle(L))
    # the integrator sits at -90 deg at low frequency; keep the branch there
    phase -= 2 * np.pi * np.round((phase[0] + np.pi / 2) / (2 * np.pi))
    below = np.nonzero(mag < 1)[0]
    if below.size == 0:
        fc, pm = float("nan"), float("nan")
    else:
        i = below[0]
        fc = float(f[i])
        pm = float(180.0 + np.degrees(phase[i]))
    cross = np.nonzero(phase <= -np.pi)[0]
    gm = float("inf") if cross.size == 0 else float(-20 * np.log10(mag[cross[0]]))
    return LoopMargins(fc, pm, gm)
