"""Compiled inner loops of the servo chain.

Every function here is plain Python over numpy arrays and scalars so it
runs unchanged when numba is disabled (``RYDLOCK_DISABLE_NUMBA=1``).

Array layouts (channel index ``c`` in 0..2, actuator slot ``a`` in 0..1):

* ``pid[c, a]``  -> kp, ki, kd, integrator_limit
* ``act[c, a]``  -> gain (Hz/V), alpha (per-step pole), range (Hz), present
* ``tp``         -> e2_x0, e2_dx, e3_x0, e3_dx, d1_x0, d1_dx, u_x0, u_dx,
                    ratio12, slope1, width1
* ``fst``        -> float state: integ, eprev, act_y, last_cmd as (3, 2)
                    blocks, then lock-in stages (3, 4)
* ``ist[c]``     -> active (0 idle, 1 locked, 2 lost), out_count, lost_at,
                    acquired, error_count
* ``counts[c]``  -> piezo_sat, current_sat, piezo_isat, current_isat
"""

import math

import numpy as np

from .._accel import jit
from ..atomic import cascade_integral_scalar

MAX_LP_ORDER = 4


@jit
def pid_step(integ, eprev, e, kp, ki, kd, ilim, dt):
    """One PID update; returns ``(integ, command, integrator_clamped)``."""
    integ = integ + ki * kp * e * dt
    clamped = False
    if integ > ilim:
        integ = ilim
        clamped = True
    elif integ < -ilim:
        integ = -ilim
        clamped = True
    cmd = kp * e + integ + kd * (e - eprev) / dt
    return integ, cmd, clamped


@jit
def actuator_step(y, cmd, gain, alpha, rng):
    """Single-pole actuator; returns ``(correction, saturated)``."""
    y = y + alpha * (gain * cmd - y)
    if y > rng:
        return rng, True
    if y < -rng:
        return -rng, True
    return y, False


@jit
def _interp_clamped(x0, dx, v, x):
    s = (x - x0) / dx
    n = v.shape[0]
    if s <= 0.0:
        return v[0]
    if s >= n - 1:
        return v[n - 1]
    i = int(s)
    w = s - i
    return v[i] * (1.0 - w) + v[i + 1] * w


@jit
def _interp_zero(x0, dx, v, x):
    s = (x - x0) / dx
    n = v.shape[0]
    if s < 0.0 or s > n - 1:
        return 0.0
    i = int(s)
    if i >= n - 1:
        return v[n - 1]
    w = s - i
    return v[i] * (1.0 - w) + v[i + 1] * w


@jit
def _interp2(x0, dx, y0, dy, v, x, y):
    sx = (x - x0) / dx
    sy = (y - y0) / dy
    nx = v.shape[0]
    ny = v.shape[1]
    if sx < 0.0:
        sx = 0.0
    if sx > nx - 1:
        sx = nx - 1.0
    if sy < 0.0:
        sy = 0.0
    if sy > ny - 1:
        sy = ny - 1.0
    i = min(int(sx), nx - 2)
    j = min(int(sy), ny - 2)
    wx = sx - i
    wy = sy - j
    return ((v[i, j] * (1.0 - wy) + v[i, j + 1] * wy) * (1.0 - wx)
            + (v[i + 1, j] * (1.0 - wy) + v[i + 1, j + 1] * wy) * wx)


@jit
def _positions(f1, f2, f3, ln1, ln2, ln3, sp, tp, shift2, shift3, gain3):
    """Offsets of each laser from its current lock point, and the laser-3 slope factor."""
    x1 = f1 - sp[0] - ln1
    s2 = _interp_clamped(tp[4], tp[5], shift2, f1)
    x2 = f2 - sp[1] - ln2 - s2
    u = f2 - tp[8] * f1
    s3 = _interp2(tp[4], tp[5], tp[6], tp[7], shift3, f1, u)
    k3 = _interp2(tp[4], tp[5], tp[6], tp[7], gain3, f1, u)
    x3 = f3 - sp[2] - ln3 - s3
    return x1, x2, x3, k3


@jit
def _servo_update(c, g, e_raw, x, fst, ist, counts, pid, act, lp_alpha, lp_order,
                  engage_at, capture, hold_steps, dt, esq):
    """Lock-in filtering, PID, actuators and lock bookkeeping for channel ``c``.

    Returns the filtered error signal.
    """
    y = e_raw
    for o in range(lp_order[c]):
        idx = 24 + c * MAX_LP_ORDER + o
        fst[idx] += lp_alpha[c] * (y - fst[idx])
        y = fst[idx]
    if ist[c, 0] == 0 and engage_at[c] >= 0 and g >= engage_at[c]:
        ist[c, 0] = 1
    if ist[c, 0] == 1:
        e = -y
        for a in range(2):
            if act[c, a, 3] == 0.0:
                continue
            k = c * 2 + a
            integ, cmd, clamped = pid_step(fst[k], fst[6 + k], e, pid[c, a, 0], pid[c, a, 1],
                                           pid[c, a, 2], pid[c, a, 3], dt)
            fst[k] = integ
            fst[6 + k] = e
            fst[18 + k] = cmd
            if clamped:
                counts[c, 2 + a] += 1
        esq[c] += e * e
        ist[c, 4] += 1
        lo = capture[c, 0]
        hi = capture[c, 1]
        if x < lo or x > hi:
            ist[c, 1] += 1
            if ist[c, 1] > hold_steps:
                ist[c, 0] = 2
                ist[c, 2] = g
        else:
            ist[c, 1] = 0
            if abs(x) < 0.05 * (hi - lo):
                ist[c, 3] = 1
    for a in range(2):
        if act[c, a, 3] == 0.0:
            continue
        k = c * 2 + a
        cmd = fst[18 + k] if ist[c, 0] != 0 else 0.0
        yv, sat = actuator_step(fst[12 + k], cmd, act[c, a, 0], act[c, a, 1], act[c, a, 2])
        fst[12 + k] = yv
        if sat:
            counts[c, a] += 1
    return y


@jit
def envelope_chunk(g0, dt, rec_every, free, lockn, sp, tp, e2, e3, shift2, shift3, gain3,
                   pid, act, lp_alpha, lp_order, engage_at, capture, hold_steps,
                   fst, ist, counts, esq, rec_f, rec_e):
    """Advance the chain ``free.shape[1]`` steps with table discriminators."""
    n = free.shape[1]
    acc_f = np.zeros(3)
    acc_e = np.zeros(3)
    r = 0
    for k in range(n):
        g = g0 + k
        f1 = free[0, k] + fst[12] + fst[13]
        f2 = free[1, k] + fst[14] + fst[15]
        f3 = free[2, k] + fst[16]
        x1, x2, x3, k3 = _positions(f1, f2, f3, lockn[0, k], lockn[1, k], lockn[2, k],
                                    sp, tp, shift2, shift3, gain3)
        e1 = tp[9] * x1 / (1.0 + (x1 / tp[10]) ** 2)
        er2 = _interp_zero(tp[0], tp[1], e2, x2)
        er3 = k3 * _interp_zero(tp[2], tp[3], e3, x3)
        y1 = _servo_update(0, g, e1, x1, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        y2 = _servo_update(1, g, er2, x2, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        y3 = _servo_update(2, g, er3, x3, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        acc_f[0] += f1
        acc_f[1] += f2
        acc_f[2] += f3
        acc_e[0] += y1
        acc_e[1] += y2
        acc_e[2] += y3
        if (k + 1) % rec_every == 0:
            for c in range(3):
                rec_f[c, r] = acc_f[c] / rec_every
                rec_e[c, r] = acc_e[c] / rec_every
                acc_f[c] = 0.0
                acc_e[c] = 0.0
            r += 1


@jit
def waveform_chunk(g0, dt, rec_every, free, lockn, sp, tp, e2, e3, shift2, shift3, gain3,
                   pid, act, lp_alpha, lp_order, engage_at, capture, hold_steps,
                   fst, ist, counts, esq, rec_f, rec_e, wf):
    """Advance the chain with explicit dither and lock-in demodulation.

    ``wf`` holds: amplitude2, fmod2, phase2, amplitude3, fmod3, phase3, gain2_v,
    gain3_v, c2, c3*amplitude, lambda1, lambda2, signed lambda3,
    halfwidth1..3 (m/s), sigma_v, dither2_on, dither3_on.
    """
    n = free.shape[1]
    acc_f = np.zeros(3)
    acc_e = np.zeros(3)
    r = 0
    twopi = 2.0 * math.pi
    for k in range(n):
        g = g0 + k
        t = g * dt
        f1 = free[0, k] + fst[12] + fst[13]
        f2 = free[1, k] + fst[14] + fst[15]
        f3 = free[2, k] + fst[16]
        x1, x2, x3, k3 = _positions(f1, f2, f3, lockn[0, k], lockn[1, k], lockn[2, k],
                                    sp, tp, shift2, shift3, gain3)
        e1 = tp[9] * x1 / (1.0 + (x1 / tp[10]) ** 2)
        dith2 = wf[0] * math.sin(twopi * wf[1] * t) * wf[17]
        dith3 = wf[3] * math.sin(twopi * wf[4] * t) * wf[18]
        v1 = wf[10] * f1
        # reference cell: lasers 1 and 2 only
        v2r = wf[11] * (f2 - sp[1] - lockn[1, k] + dith2)
        s_ref = wf[8] * cascade_integral_scalar(v1, v2r, 0.0, wf[13], wf[14], wf[15], wf[16], 2)
        er2 = wf[6] * 2.0 * s_ref * math.sin(twopi * wf[1] * t + wf[2])
        # detection cell: all three lasers
        v2 = wf[11] * (f2 + dith2)
        v3 = wf[12] * (f3 - sp[2] - lockn[2, k] + dith3)
        s_det = (wf[8] * cascade_integral_scalar(v1, v2, 0.0, wf[13], wf[14], wf[15], wf[16], 2)
                 + wf[9] * cascade_integral_scalar(v1, v2, v3, wf[13], wf[14], wf[15], wf[16], 3))
        er3 = wf[7] * 2.0 * s_det * math.sin(twopi * wf[4] * t + wf[5])
        y1 = _servo_update(0, g, e1, x1, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        y2 = _servo_update(1, g, er2, x2, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        y3 = _servo_update(2, g, er3, x3, fst, ist, counts, pid, act, lp_alpha, lp_order,
                           engage_at, capture, hold_steps, dt, esq)
        acc_f[0] += f1
        acc_f[1] += f2
        acc_f[2] += f3
        acc_e[0] += y1
        acc_e[1] += y2
        acc_e[2] += y3
        if (k + 1) % rec_every == 0:
            for c in range(3):
                rec_f[c, r] = acc_f[c] / rec_every
                rec_e[c, r] = acc_e[c] / rec_every
                acc_f[c] = 0.0
                acc_e[c] = 0.0
            r += 1
