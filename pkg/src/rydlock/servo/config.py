"""Servo-chain configuration objects and the tuned defaults."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from ..lockin import DEFAULT_SLOPE, DitherSpec
from ..noise import NoiseSpec

__all__ = [
    "PidGains",
    "Actuator",
    "ActuatorLoop",
    "ChannelConfig",
    "ServoChainConfig",
    "ConfigError",
    "ENVELOPE_DT",
    "WAVEFORM_DT",
    "default_chain_config",
    "piezo",
    "current",
]

ENVELOPE_DT = 100e-6
WAVEFORM_DT = 0.5e-6
MODES = ("envelope", "waveform")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PidGains:
    """PID gains; the integrator accumulates ``ki * kp * e * dt``."""

    kp: float = 0.0
    ki: float = 0.0
    kd: float = 0.0
    integrator_limit: float = 10.0

    def __post_init__(self):
        if self.ki < 0:
            raise ConfigError("ki must be >= 0")
        if not self.integrator_limit > 0:
            raise ConfigError("integrator_limit must be positive")


@dataclass(frozen=True)
class Actuator:
    kind: str
    gain: float       # Hz/V
    bandwidth: float  # Hz, single pole
    range: float      # +/- Hz

    def __post_init__(self):
        if self.kind not in ("piezo", "current"):
            raise ConfigError(f"unknown actuator kind {self.kind!r}")
        if self.gain == 0 or not math.isfinite(self.gain):
            raise ConfigError("actuator gain must be finite and nonzero")
        if not self.bandwidth > 0:
            raise ConfigError("actuator bandwidth must be positive")
        if not self.range > 0:
            raise ConfigError("actuator range must be positive")


def piezo(gain=50e6, bandwidth=1e3, range=500e6):
    return Actuator("piezo", gain, bandwidth, range)


def current(gain=5e6, bandwidth=50e3, range=20e6):
    return Actuator("current", gain, bandwidth, range)


@dataclass(frozen=True)
class ActuatorLoop:
    actuator: Actuator
    gains: PidGains


@dataclass(frozen=True)
class ChannelConfig:
    """One laser lock.

    ``noise`` is the free-running laser; ``lock_noise`` moves the lock point
    itself (reference-cell zero wander and detection noise referred to
    frequency), which no servo can remove.  ``setpoint`` offsets the lock
    point, ``static_offset`` adds a constant disturbance to the laser.
    """

    loops: tuple
    noise: NoiseSpec = NoiseSpec()
    lock_noise: NoiseSpec = NoiseSpec()
    dither: DitherSpec | None = None
    dither_enabled: bool = True
    engaged: bool = True
    engage_delay: float = 0.0
    setpoint: float = 0.0
    static_offset: float = 0.0
    error_slope: float = DEFAULT_SLOPE
    discriminator_width: float = 3e6  # first-step lock only

    @property
    def actuator_kinds(self):
        return tuple(loop.actuator.kind for loop in self.loops)


@dataclass(frozen=True)
class ServoChainConfig:
    channels: tuple
    duration: float = 1.0
    mode: str = "envelope"
    dt: float | None = None
    record_dt: float | None = None
    lock_loss_hold: float = 0.1
    scale_detection_noise: bool = True

    @property
    def step(self) -> float:
        if self.dt is not None:
            return self.dt
        return ENVELOPE_DT if self.mode == "envelope" else WAVEFORM_DT

    @property
    def record_step(self) -> float:
        return self.record_dt if self.record_dt is not None else max(self.step, ENVELOPE_DT)

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if len(self.channels) != 3:
            raise ConfigError("the chain has exactly three channels")
        kinds = [ch.actuator_kinds for ch in self.channels]
        if sorted(kinds[0]) != ["current", "piezo"] or sorted(kinds[1]) != ["current", "piezo"]:
            raise ConfigError("channels 1 and 2 need one piezo and one current actuator")
        if kinds[2] != ("piezo",):
            raise ConfigError("channel 3 is piezo-only")
        for i in (1, 2):
            if self.channels[i].dither is None:
                raise ConfigError(f"channel {i + 1} needs a dither/lock-in spec")
        if not self.duration > 0:
            raise ConfigError("duration must be positive")
        dt = self.step
        if not dt > 0:
            raise ConfigError("dt must be positive")
        if self.mode == "waveform":
            if self.duration > 10.0:
                raise ConfigError("waveform mode is limited to runs <= 10 s; use envelope mode")
            for i in (1, 2):
                d = self.channels[i].dither
                if dt > d.tau_lp / 10:
                    raise ConfigError(f"waveform dt must be <= tau_lp/10 on channel {i + 1}")
                if dt > 1.0 / (20.0 * d.f_mod):
                    raise ConfigError(f"waveform dt undersamples the channel {i + 1} dither")
        ratio = self.record_step / dt
        if abs(ratio - round(ratio)) > 1e-6 or round(ratio) < 1:
            raise ConfigError("record_dt must be an integer multiple of dt")
        if self.duration < self.record_step:
            raise ConfigError("duration shorter than one record interval")

    def with_channel(self, index: int, **changes) -> "ServoChainConfig":
        chans = list(self.channels)
        chans[index] = replace(chans[index], **changes)
        return replace(self, channels=tuple(chans))


def default_chain_config(duration: float = 1.0, mode: str = "envelope", **kwargs) -> ServoChainConfig:
    """Three locks with the tuned default gains and no noise.

    Channel 2 runs deliberately softer gains than channel 1.  The second-step
    dither (1 MHz at 30 kHz) is a placeholder depth, not a measured value.
    """
    two = 2.0 * math.pi
    ch1 = ChannelConfig(
        loops=(ActuatorLoop(piezo(), PidGains(kp=1.0, ki=two * 800, integrator_limit=10.0)),
               ActuatorLoop(current(), PidGains(kp=2.0, ki=0.0, integrator_limit=4.0))),
    )
    ch2 = ChannelConfig(
        loops=(ActuatorLoop(piezo(), PidGains(kp=0.5, ki=two * 400, integrator_limit=10.0)),
               ActuatorLoop(current(), PidGains(kp=1.0, ki=0.0, integrator_limit=4.0))),
        dither=DitherSpec(depth=1e6, f_mod=30e3, tau_lp=100e-6),
        engage_delay=0.01,
    )
    ch3 = ChannelConfig(
        loops=(ActuatorLoop(piezo(), PidGains(kp=0.5, ki=two * 400, integrator_limit=10.0)),),
        dither=DitherSpec(depth=15e6, f_mod=90e3, tau_lp=100e-6),
        engage_delay=0.02,
    )
    return ServoChainConfig(channels=(ch1, ch2, ch3), duration=duration, mode=mode, **kwargs)
