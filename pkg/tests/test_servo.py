import math
from dataclasses import replace

import numpy as np
import pytest

from rydlock.allan import overlapping_adev
from rydlock.noise import NoiseSpec
from rydlock.servo import (ActuatorLoop, ActuatorState, ConfigError, PidGains, PidState,
                           actuator_response, current, default_chain_config, loop_margins,
                           open_loop_response, pid_update, piezo, run_locked_chain,
                           velocity_ratios)

LAM1, LAM2, LAM3 = 780e-9, 776e-9, 1260e-9


def settled(trace, seconds):
    n = int(round(seconds / trace.dt))
    return float(np.mean(trace.samples[-n:]))


# --- PID ---------------------------------------------------------------------

def test_pid_quiescent():
    cmd, st = pid_update(PidState(), 0.0, PidGains(kp=1.0, ki=100.0, kd=1e-3), 1e-3)
    assert cmd == 0.0 and st.integrator == 0.0


def test_pid_pure_proportional():
    cmd, _ = pid_update(PidState(), 0.5, PidGains(kp=2.0), 1e-3)
    assert cmd == 1.0


def test_pid_integrator_closed_form():
    gains = PidGains(kp=1.0, ki=10.0, integrator_limit=100.0)
    st = PidState()
    for _ in range(100):
        _, st = pid_update(st, 1.0, gains, 1e-3)
    assert st.integrator == pytest.approx(1.0, abs=1e-9)
    assert not st.clamped


def test_pid_derivative_and_clamp():
    gains = PidGains(kp=1.0, kd=0.01)
    cmd, st = pid_update(PidState(last_error=0.2), 0.5, gains, 1e-3)
    assert cmd == pytest.approx(0.5 + 0.01 * 0.3 / 1e-3, rel=1e-12)
    clamp = PidGains(kp=1.0, ki=1e6, integrator_limit=0.25)
    st = PidState()
    for _ in range(10):
        _, st = pid_update(st, 1.0, clamp, 1e-3)
    assert st.integrator == 0.25 and st.clamped
    _, st = pid_update(st, -1.0, clamp, 1e-3)
    assert st.integrator == -0.25


def test_pid_gain_validation():
    with pytest.raises(ConfigError):
        PidGains(ki=-1.0)
    with pytest.raises(ConfigError):
        PidGains(integrator_limit=0.0)
    with pytest.raises(ValueError):
        pid_update(PidState(), 1.0, PidGains(kp=1.0), 0.0)


# --- actuator ----------------------------------------------------------------

def _step(act, command, t, dt):
    st = ActuatorState()
    y = 0.0
    for _ in range(int(round(t / dt))):
        y, st = actuator_response(command, act, st, dt)
    return y, st


def test_actuator_quiescent():
    y, st = actuator_response(0.0, piezo(), ActuatorState(), 1e-4)
    assert y == 0.0 and not st.saturated


def test_actuator_dc_gain():
    act = piezo(gain=50e6, bandwidth=1e3)
    y, _ = _step(act, 0.2, 20 / act.bandwidth, 1e-6)
    assert y == pytest.approx(50e6 * 0.2, rel=1e-3)


def test_actuator_single_pole_step():
    act = current(gain=5e6, bandwidth=2e3)
    dt = 1e-7
    t = 1 / (2 * math.pi * act.bandwidth)
    y, _ = _step(act, 1.0, t, dt)
    assert y / 5e6 == pytest.approx(1 - math.exp(-1), rel=0.01)


def test_actuator_range_clamp():
    act = current(gain=5e6, range=20e6)
    y, st = _step(act, 10.0, 1e-3, 1e-6)
    assert y == 20e6 and st.saturated
    y, st = _step(act, -10.0, 1e-3, 1e-6)
    assert y == -20e6


@pytest.mark.parametrize("kw", [dict(gain=0.0), dict(bandwidth=0.0), dict(range=-1.0)])
def test_actuator_validation(kw):
    with pytest.raises(ConfigError):
        piezo(**kw)


# --- loop design -------------------------------------------------------------

@pytest.mark.parametrize("index", [0, 1, 2])
def test_piezo_loop_phase_margin(index):
    ch = default_chain_config().channels[index]
    piezo_only = replace(ch, loops=tuple(l for l in ch.loops if l.actuator.kind == "piezo"))
    for c in (ch, piezo_only):
        m = loop_margins(c)
        assert m.phase_margin_deg >= 60
        assert m.crossover_hz > 10
        assert m.gain_margin_db > 6


def test_open_loop_has_integrator():
    ch = default_chain_config().channels[2]
    lo = np.abs(open_loop_response(ch, [0.1, 0.2]))
    assert lo[0] / lo[1] == pytest.approx(2.0, rel=0.01)


# --- configuration -----------------------------------------------------------

def test_config_rejects_current_on_channel3():
    cfg = default_chain_config()
    ch3 = cfg.channels[2]
    bad = cfg.with_channel(2, loops=ch3.loops + (ActuatorLoop(current(), PidGains(kp=1.0)),))
    with pytest.raises(ConfigError, match="piezo-only"):
        bad.validate()


def test_config_rejects_missing_current_on_channel1():
    cfg = default_chain_config()
    bad = cfg.with_channel(0, loops=cfg.channels[0].loops[:1])
    with pytest.raises(ConfigError):
        bad.validate()


@pytest.mark.parametrize("kw,match", [
    (dict(mode="waveform", duration=20.0), "envelope"),
    (dict(mode="waveform", duration=0.1, dt=20e-6), "tau_lp"),
    (dict(mode="fast"), "mode"),
    (dict(duration=1.0, record_dt=1.5e-4), "multiple"),
    (dict(duration=-1.0), "duration"),
])
def test_config_validation(kw, match):
    with pytest.raises(ConfigError, match=match):
        default_chain_config(**kw).validate()


# --- closed-loop chain -------------------------------------------------------

def test_zero_noise_chain_stays_at_zero(scheme, target50f):
    res = run_locked_chain(default_chain_config(duration=2.0), scheme, target50f)
    for tr in res.traces:
        assert np.all(np.abs(tr.samples) <= 1e-6)
    s = res.summary
    assert not s.lock_lost
    assert all(ch.lock_acquired and ch.locked for ch in s.channels)
    assert all(v == 0.0 for ch in s.channels for v in ch.saturation.values())


def test_static_channel1_offset_propagates_to_channel3(scheme, target50f):
    cfg = default_chain_config(duration=1.0).with_channel(0, engaged=False, static_offset=1e6)
    res = run_locked_chain(cfg, scheme, target50f)
    assert settled(res.traces[0], 0.2) == pytest.approx(1e6, abs=1e-6)
    assert settled(res.traces[2], 0.2) == pytest.approx(1e6 * LAM1 / LAM3, abs=2e3)


@pytest.mark.parametrize("d", [-3e6, 1e6, 4e6])
def test_transfer_chain_ratios(scheme, target50f, d):
    cfg = default_chain_config(duration=0.5).with_channel(0, engaged=False, static_offset=d)
    res = run_locked_chain(cfg, scheme, target50f)
    f2 = settled(res.traces[1], 0.1)
    f3 = settled(res.traces[2], 0.1)
    assert f2 / d == pytest.approx(LAM1 / LAM2, rel=5e-3)
    assert f3 / d == pytest.approx(LAM1 / LAM3, rel=5e-3)


def test_velocity_ratios_match_wavelengths(scheme):
    r12, r13 = velocity_ratios(scheme)
    assert r12 == pytest.approx(LAM1 / LAM2, rel=1e-12)
    assert r13 == pytest.approx(LAM1 / LAM3, rel=1e-12)


@pytest.mark.parametrize("index,offset", [(0, 1e6), (1, 0.5e6), (2, 2e6), (2, -3e6)])
def test_steady_state_rejection(scheme, target50f, index, offset):
    cfg = default_chain_config(duration=1.0).with_channel(index, static_offset=offset)
    res = run_locked_chain(cfg, scheme, target50f)
    assert res.summary.channels[index].locked
    assert abs(settled(res.traces[index], 0.2)) < 1e3


def _white_config(engaged, duration=30.0):
    cfg = default_chain_config(duration=duration, record_dt=0.1)
    for c in range(3):
        cfg = cfg.with_channel(c, noise=NoiseSpec(h0=1e7, seed=100 + c), engaged=engaged)
    return cfg


def test_closed_loop_suppresses_white_fm(scheme, target50f):
    closed = run_locked_chain(_white_config(True), scheme, target50f)
    opened = run_locked_chain(_white_config(False), scheme, target50f)
    for c in range(3):
        sc = overlapping_adev(closed.traces[c].samples, 0.1, [10]).sigmas[0]
        so = overlapping_adev(opened.traces[c].samples, 0.1, [10]).sigmas[0]
        assert so > 0
        assert sc <= so / 10, f"channel {c + 1}: closed {sc:.3g} vs open {so:.3g}"


def test_determinism(scheme, target50f):
    cfg = _white_config(True, duration=2.0)
    a = run_locked_chain(cfg, scheme, target50f)
    b = run_locked_chain(cfg, scheme, target50f)
    for ta, tb in zip(a.traces, b.traces):
        assert ta.samples.tobytes() == tb.samples.tobytes()
    assert list(a.summary.items()) == list(b.summary.items())


def test_lock_loss_flagged_and_run_continues(scheme, target50f):
    # a 200 MHz/s ramp is tracked until the 500 MHz piezo range runs out at 2.5 s
    cfg = default_chain_config(duration=3.0).with_channel(
        2, noise=NoiseSpec(drift_rate=2e8))
    res = run_locked_chain(cfg, scheme, target50f)
    ch3 = res.summary.channels[2]
    assert ch3.lock_acquired and not ch3.locked
    assert 2.4 < ch3.lock_lost_at < 2.8
    assert ch3.saturation["piezo"] > 0
    assert res.summary.lock_lost
    assert len(res.traces[2]) == 30_000


def test_disengaged_channel_is_free_running(scheme, target50f):
    cfg = default_chain_config(duration=0.5).with_channel(2, engaged=False, static_offset=5e6)
    res = run_locked_chain(cfg, scheme, target50f)
    np.testing.assert_allclose(res.traces[2].samples, 5e6, rtol=0, atol=1e-6)
    assert not res.summary.channels[2].lock_acquired


@pytest.mark.slow
def test_envelope_and_waveform_agree(scheme, target50f):
    def cfg(mode):
        c = default_chain_config(duration=0.5, mode=mode, record_dt=1e-3)
        c = c.with_channel(0, engaged=False, static_offset=1e6)
        for i in range(3):
            c = c.with_channel(i, noise=NoiseSpec(h0=1e3, seed=7 + i))
        return c

    env = run_locked_chain(cfg("envelope"), scheme, target50f)
    wav = run_locked_chain(cfg("waveform"), scheme, target50f)
    assert not wav.summary.lock_lost
    m_env = np.mean(env.traces[2].samples)
    m_wav = np.mean(wav.traces[2].samples)
    assert abs(m_env - m_wav) <= 5e3


def test_far_offset_never_acquires(scheme, target50f):
    cfg = default_chain_config(duration=0.5).with_channel(2, static_offset=50e6)
    res = run_locked_chain(cfg, scheme, target50f)
    ch3 = res.summary.channels[2]
    assert not ch3.lock_acquired and not ch3.locked
    # engaged at 20 ms, flagged after the 100 ms hold
    assert ch3.lock_lost_at == pytest.approx(0.02 + 0.1, abs=1e-3)
    assert res.summary.channels[0].locked and res.summary.channels[1].locked


def test_pull_in_from_line_wing(scheme, target50f):
    # beyond the error extrema the signal still restores, just weakly
    cfg = default_chain_config(duration=0.5).with_channel(2, static_offset=20e6)
    res = run_locked_chain(cfg, scheme, target50f)
    assert res.summary.channels[2].locked
    assert abs(res.traces[2].samples[-1]) < 1.0
