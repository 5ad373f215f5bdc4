import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rydlock import _accel
from rydlock.atomic import cascade_integral_scalar
from rydlock.faddeeva import w_upper
from rydlock.noise import NoiseSpec
from rydlock.servo import default_chain_config, kernels, run_locked_chain

needs_numba = pytest.mark.skipif(not _accel.USE_NUMBA, reason="numba disabled")


def _noisy(duration, mode="envelope", record_dt=None):
    cfg = default_chain_config(duration=duration, mode=mode, record_dt=record_dt)
    cfg = cfg.with_channel(0, static_offset=2e5)
    for c in range(3):
        cfg = cfg.with_channel(c, noise=NoiseSpec(h0=1e8, h_flicker=1e6, seed=c),
                               lock_noise=NoiseSpec(h0=1e6, seed=10 + c))
    return cfg


def test_py_func_unwraps():
    def f(x):
        return x
    assert _accel.py_func(f) is f
    if _accel.USE_NUMBA:
        assert _accel.py_func(kernels.pid_step) is not kernels.pid_step


@needs_numba
def test_scalar_kernels_match_python():
    rng = np.random.default_rng(0)
    for _ in range(50):
        args = rng.normal(size=8)
        args[6] = abs(args[6]) + 0.1
        args[7] = 1e-3
        assert kernels.pid_step(*args) == pytest.approx(_accel.py_func(kernels.pid_step)(*args),
                                                        rel=1e-14)
        c = rng.uniform(-20, 20, 3)
        a = (4.7, 1.6, 3.8, 169.0)
        jit = cascade_integral_scalar(*c, *a[:3], a[3], 3)
        ref = _accel.py_func(cascade_integral_scalar)(*c, *a[:3], a[3], 3)
        assert jit == pytest.approx(ref, rel=1e-12)
        z = complex(rng.uniform(-30, 30), rng.uniform(0, 5))
        assert w_upper(z) == pytest.approx(_accel.py_func(w_upper)(z), rel=1e-13)


@needs_numba
def test_actuator_kernel_matches_python():
    rng = np.random.default_rng(1)
    for _ in range(50):
        y, cmd, gain, alpha, rng_hz = rng.normal(size=3).tolist() + [0.3, 2.0]
        assert kernels.actuator_step(y, cmd, gain, alpha, rng_hz) == \
            _accel.py_func(kernels.actuator_step)(y, cmd, gain, alpha, rng_hz)


@needs_numba
@pytest.mark.parametrize("mode,duration,record", [("envelope", 0.05, 1e-3), ("waveform", 0.002, 1e-4)])
def test_chain_kernel_matches_python(monkeypatch, scheme, target50f, mode, duration, record):
    cfg = _noisy(duration, mode, record)
    fast = run_locked_chain(cfg, scheme, target50f)
    name = "envelope_chunk" if mode == "envelope" else "waveform_chunk"
    monkeypatch.setattr(kernels, name, _accel.py_func(getattr(kernels, name)))
    slow = run_locked_chain(cfg, scheme, target50f)
    for a, b in zip(fast.traces, slow.traces):
        np.testing.assert_allclose(a.samples, b.samples, rtol=1e-9, atol=1e-6)
    fs, ss = dict(fast.summary.items()), dict(slow.summary.items())
    assert fs.keys() == ss.keys()
    for k in fs:
        if k.endswith(("_v", "_hz")):
            assert float(fs[k]) == pytest.approx(float(ss[k]), rel=1e-9, abs=1e-6)
        else:
            assert fs[k] == ss[k], k


SCRIPT = """
import json
from rydlock import _accel
from rydlock.atomic import LadderScheme, RydbergTarget
from rydlock.noise import NoiseSpec
from rydlock.servo import default_chain_config, run_locked_chain
cfg = default_chain_config(duration=0.05, record_dt=1e-3).with_channel(0, static_offset=2e5)
for c in range(3):
    cfg = cfg.with_channel(c, noise=NoiseSpec(h0=1e8, h_flicker=1e6, seed=c),
                           lock_noise=NoiseSpec(h0=1e6, seed=10 + c))
res = run_locked_chain(cfg, LadderScheme.rb85_default(), RydbergTarget(50, "F7/2"))
print(json.dumps({"numba": _accel.USE_NUMBA, "traces": [t.samples.tolist() for t in res.traces]}))
"""


def _run_script(disable):
    env = dict(os.environ)
    env.pop("RYDLOCK_DISABLE_NUMBA", None)
    if disable:
        env["RYDLOCK_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True,
                         timeout=600, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_env_flag_selects_pure_python_path():
    pure = _run_script(disable=True)
    assert pure["numba"] is False
    compiled = _run_script(disable=False)
    assert compiled["numba"] is True
    for a, b in zip(pure["traces"], compiled["traces"]):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-6)
