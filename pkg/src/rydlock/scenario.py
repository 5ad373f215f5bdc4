"""Scenario files: parsing, validation, provenance-tagged echo and object wiring.

A scenario is an INI-style text file.  Every physical quantity carries its
unit in the key name (``_hz``, ``_s``, ``_v``, ``_nm`` ...).  Unknown
sections or keys are rejected.  Each effective value is tagged with where
it came from: ``paper`` (a value reported for the apparatus), ``default``
(a modelling choice of this package) or ``user`` (set in the file or on
the command line).
"""

from __future__ import annotations

import configparser
import io
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .atomic import BeyondDemonstratedRange, LadderScheme, RydbergTarget
from .lockin import DitherSpec
from .noise import NoiseSpec
from .servo.config import (ActuatorLoop, ChannelConfig, ConfigError, PidGains, ServoChainConfig,
                           current, piezo)

__all__ = ["Scenario", "Param", "SCHEMA", "load_scenario", "parse_scenario", "bundled_scenario",
           "bundled_names", "ConfigError"]

PAPER, DEFAULT, USER = "paper", "default", "user"
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Param:
    key: str
    kind: str            # float | int | bool | str | floats | ints | optfloat
    default: object
    provenance: str = DEFAULT


def _noise_params(prefix):
    return [
        Param(f"{prefix}_white_hz2_per_hz", "float", 0.0),
        Param(f"{prefix}_flicker_hz2", "float", 0.0),
        Param(f"{prefix}_random_walk_hz2_hz", "float", 0.0),
        Param(f"{prefix}_drift_hz_per_s", "float", 0.0),
    ]


def _loop_params(kind, kp, ki_hz, ilim, gain, bw, rng, present=True):
    p = kind
    out = [
        Param(f"{p}_kp_v_per_v", "float", kp),
        Param(f"{p}_ki_per_s", "float", TWO_PI * ki_hz),
        Param(f"{p}_kd_s", "float", 0.0),
        Param(f"{p}_integrator_limit_v", "float", ilim),
        Param(f"{p}_gain_hz_per_v", "float", gain),
        Param(f"{p}_bandwidth_hz", "float", bw),
        Param(f"{p}_range_hz", "float", rng),
    ]
    return out if present else []


def _channel(index):
    base = [*_noise_params("noise"), *_noise_params("lock_noise"),
            Param("setpoint_hz", "float", 0.0),
            Param("static_offset_hz", "float", 0.0),
            Param("engaged", "bool", True),
            Param("engage_delay_s", "float", [0.0, 0.01, 0.02][index])]
    if index == 0:
        return base + [
            Param("error_slope_v_per_hz", "float", 1e-8),
            Param("discriminator_width_hz", "float", 3e6),
            *_loop_params("piezo", 1.0, 800.0, 10.0, 50e6, 1e3, 500e6),
            *_loop_params("current", 2.0, 0.0, 4.0, 5e6, 50e3, 20e6),
        ]
    if index == 1:
        return base + [
            Param("error_slope_v_per_hz", "float", 1e-8),
            Param("dither_enabled", "bool", True),
            Param("dither_depth_hz", "float", 1e6),
            Param("dither_freq_hz", "float", 30e3),
            Param("dither_phase_rad", "float", 0.0),
            Param("lockin_tau_s", "float", 100e-6),
            Param("lockin_order", "int", 1),
            *_loop_params("piezo", 0.5, 400.0, 10.0, 50e6, 1e3, 500e6),
            *_loop_params("current", 1.0, 0.0, 4.0, 5e6, 50e3, 20e6),
        ]
    return base + [
        Param("error_slope_v_per_hz", "float", 1e-8, PAPER),
        Param("dither_enabled", "bool", True),
        Param("dither_depth_hz", "float", 15e6, PAPER),
        Param("dither_freq_hz", "float", 90e3, PAPER),
        Param("dither_phase_rad", "float", 0.0),
        Param("lockin_tau_s", "float", 100e-6),
        Param("lockin_order", "int", 1),
        *_loop_params("piezo", 0.5, 400.0, 10.0, 50e6, 1e3, 500e6),
    ]


SCHEMA = {
    "scenario": [
        Param("name", "str", "unnamed"),
        Param("mode", "str", "envelope"),
        Param("duration_s", "float", 1.0),
        Param("dt_s", "optfloat", None),
        Param("record_dt_s", "float", 0.1),
        Param("seed", "int", 0),
        Param("lock_loss_hold_s", "float", 0.1),
        Param("scale_detection_noise", "bool", True),
    ],
    "target": [
        Param("n", "int", 50, PAPER),
        Param("series", "str", "F7/2", PAPER),
        Param("quantum_defect", "optfloat", None),
        Param("amplitude_exponent", "float", 3.0),
    ],
    "scheme": [
        Param("lambda1_nm", "float", 780.0, PAPER),
        Param("lambda2_nm", "float", 776.0, PAPER),
        Param("lambda3_nm", "float", 1260.0, PAPER),
        Param("gamma1_hz", "float", 6e6, PAPER),
        Param("gamma2_hz", "float", 2e6),
        Param("gamma3_hz", "float", 3e6),
        Param("c2", "float", 0.2),
        Param("c3", "float", 0.05),
        Param("temperature_k", "float", 293.0),
        Param("copropagating", "bool", True, PAPER),
    ],
    "counter": [
        Param("gate_s", "float", 1.0),
        Param("fm_error_hz", "float", 1e6, PAPER),
        Param("fm_channels", "ints", (2, 3), PAPER),
        Param("beat_offset_hz", "float", 20e6, PAPER),
    ],
    "analysis": [
        Param("adev", "bool", True),
        Param("adev_max_tau_s", "float", 1e3, PAPER),
        Param("correlation", "bool", True),
        Param("transfer_channel", "int", 1),
        Param("transfer_levels_hz", "floats", (-2e6, -1e6, 0.0, 1e6, 2e6)),
        Param("transfer_duration_s", "float", 0.3),
        Param("transfer_settle_s", "float", 0.1),
    ],
    "scan": [
        Param("axis", "int", 3),
        Param("span_hz", "float", 60e6),
        Param("points", "int", 601),
    ],
    "ch1": _channel(0),
    "ch2": _channel(1),
    "ch3": _channel(2),
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(param: Param, text: str):
    text = text.strip()
    try:
        if param.kind == "float":
            value = float(text)
            if not math.isfinite(value):
                raise ValueError
            return value
        if param.kind == "optfloat":
            return None if text.lower() in ("auto", "none", "") else _convert(Param("", "float", 0), text)
        if param.kind == "int":
            return int(text)
        if param.kind == "bool":
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError
        if param.kind == "str":
            return text
        if param.kind == "floats":
            return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())
        if param.kind == "ints":
            return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())
    except ValueError:
        pass
    raise ConfigError(f"cannot read {param.key} = {text!r} as {param.kind}")


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass
class Scenario:
    """Validated scenario: raw values with provenance plus the built objects."""

    values: dict = field(default_factory=dict)      # (section, key) -> value
    provenance: dict = field(default_factory=dict)  # (section, key) -> tag
    source: str = "<defaults>"
    scheme: LadderScheme | None = None
    target: RydbergTarget | None = None
    chain: ServoChainConfig | None = None

    def get(self, section, key):
        return self.values[(section, key)]

    @property
    def name(self) -> str:
        return self.get("scenario", "name")

    @property
    def seed(self) -> int:
        return self.get("scenario", "seed")

    @property
    def gate(self) -> float:
        return self.get("counter", "gate_s")

    @property
    def fm_error(self) -> float:
        return self.get("counter", "fm_error_hz")

    @property
    def fm_flags(self):
        chans = self.get("counter", "fm_channels")
        return tuple(i in chans for i in (1, 2, 3))

    def override(self, section, key, value) -> "Scenario":
        """Copy with one value replaced (tagged ``user``) and rebuilt."""
        values = dict(self.values)
        prov = dict(self.provenance)
        if (section, key) not in values:
            raise ConfigError(f"unknown setting [{section}] {key}")
        values[(section, key)] = value
        prov[(section, key)] = USER
        return _build(values, prov, self.source)

    def echo(self) -> str:
        """Every effective parameter with its provenance, in scenario syntax."""
        out = io.StringIO()
        out.write(f"# effective configuration (source: {self.source})\n")
        for section, params in SCHEMA.items():
            out.write(f"\n[{section}]\n")
            width = max(len(p.key) for p in params)
            for p in params:
                value = self.values[(section, p.key)]
                out.write(f"{p.key:<{width}} = {_format(value)}  "
                          f"# provenance: {self.provenance[(section, p.key)]}\n")
        return out.getvalue()


def _noise_spec(values, section, prefix, seed):
    g = lambda k: values[(section, f"{prefix}_{k}")]
    try:
        return NoiseSpec(h0=g("white_hz2_per_hz"), h_flicker=g("flicker_hz2"),
                         h_rw=g("random_walk_hz2_hz"), drift_rate=g("drift_hz_per_s"), seed=seed)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {prefix}: {exc}") from exc


def _loop(values, section, kind):
    g = lambda k: values[(section, f"{kind}_{k}")]
    make = piezo if kind == "piezo" else current
    gains = PidGains(kp=g("kp_v_per_v"), ki=g("ki_per_s"), kd=g("kd_s"),
                     integrator_limit=g("integrator_limit_v"))
    return ActuatorLoop(make(g("gain_hz_per_v"), g("bandwidth_hz"), g("range_hz")), gains)


def _build(values, provenance, source) -> Scenario:
    sc = Scenario(values, provenance, source)
    v = lambda s, k: values[(s, k)]
    try:
        sc.scheme = LadderScheme.rb85_default(
            lambda1=v("scheme", "lambda1_nm") * 1e-9, lambda2=v("scheme", "lambda2_nm") * 1e-9,
            lambda3=v("scheme", "lambda3_nm") * 1e-9, gamma1=v("scheme", "gamma1_hz"),
            gamma2=v("scheme", "gamma2_hz"), gamma3=v("scheme", "gamma3_hz"),
            c2=v("scheme", "c2"), c3=v("scheme", "c3"), temperature=v("scheme", "temperature_k"),
            copropagating=v("scheme", "copropagating"))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", BeyondDemonstratedRange)
            sc.target = RydbergTarget(v("target", "n"), v("target", "series"),
                                      v("target", "quantum_defect"), v("target", "amplitude_exponent"))
        seed = v("scenario", "seed")
        if seed < 0:
            raise ConfigError("seed must be >= 0")
        channels = []
        for i, section in enumerate(("ch1", "ch2", "ch3")):
            kinds = ("piezo", "current") if i < 2 else ("piezo",)
            kw = dict(
                loops=tuple(_loop(values, section, k) for k in kinds),
                noise=_noise_spec(values, section, "noise", seed),
                lock_noise=_noise_spec(values, section, "lock_noise", seed),
                engaged=v(section, "engaged"),
                engage_delay=v(section, "engage_delay_s"),
                setpoint=v(section, "setpoint_hz"),
                static_offset=v(section, "static_offset_hz"),
                error_slope=v(section, "error_slope_v_per_hz"),
            )
            if i == 0:
                kw["discriminator_width"] = v(section, "discriminator_width_hz")
            else:
                kw["dither"] = DitherSpec(depth=v(section, "dither_depth_hz"),
                                          f_mod=v(section, "dither_freq_hz"),
                                          phase=v(section, "dither_phase_rad"),
                                          tau_lp=v(section, "lockin_tau_s"),
                                          lp_order=v(section, "lockin_order"))
                kw["dither_enabled"] = v(section, "dither_enabled")
            if not kw["error_slope"] > 0:
                raise ConfigError(f"[{section}] error_slope_v_per_hz must be positive")
            if kw["engage_delay"] < 0:
                raise ConfigError(f"[{section}] engage_delay_s must be >= 0")
            channels.append(ChannelConfig(**kw))
        sc.chain = ServoChainConfig(
            channels=tuple(channels), duration=v("scenario", "duration_s"),
            mode=v("scenario", "mode"), dt=v("scenario", "dt_s"),
            record_dt=v("scenario", "record_dt_s"),
            lock_loss_hold=v("scenario", "lock_loss_hold_s"),
            scale_detection_noise=v("scenario", "scale_detection_noise"))
        sc.chain.validate()
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    _check_analysis(sc)
    return sc


def _check_analysis(sc: Scenario) -> None:
    g = sc.get
    if not g("counter", "gate_s") > 0:
        raise ConfigError("[counter] gate_s must be positive")
    ratio = g("counter", "gate_s") / sc.chain.record_step
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise ConfigError("[counter] gate_s must be an integer multiple of record_dt_s")
    if g("counter", "fm_error_hz") < 0:
        raise ConfigError("[counter] fm_error_hz must be >= 0")
    if not set(g("counter", "fm_channels")) <= {1, 2, 3}:
        raise ConfigError("[counter] fm_channels must list channels 1..3")
    if g("counter", "beat_offset_hz") < 0:
        raise ConfigError("[counter] beat_offset_hz must be >= 0")
    if g("analysis", "transfer_channel") not in (1, 2):
        raise ConfigError("[analysis] transfer_channel must be 1 or 2")
    if not 0 < g("analysis", "transfer_settle_s") < g("analysis", "transfer_duration_s"):
        raise ConfigError("[analysis] transfer_settle_s must be positive and below transfer_duration_s")
    if g("scan", "axis") not in (2, 3):
        raise ConfigError("[scan] axis must be 2 or 3")
    if not g("scan", "span_hz") > 0 or g("scan", "points") < 51:
        raise ConfigError("[scan] needs span_hz > 0 and points >= 51")


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse scenario text; raises ``ConfigError`` on any problem."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None,
                                       default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from exc
    values, prov = {}, {}
    for section, params in SCHEMA.items():
        for p in params:
            values[(section, p.key)] = p.default
            prov[(section, p.key)] = p.provenance
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        known = {p.key: p for p in SCHEMA[section]}
        for key, text_value in parser.items(section):
            if key not in known:
                raise ConfigError(f"unknown key [{section}] {key}")
            values[(section, key)] = _convert(known[key], text_value)
            prov[(section, key)] = USER
    return _build(values, prov, source)


def load_scenario(path) -> Scenario:
    """Read a scenario file (``OSError`` propagates for I/O problems)."""
    path = Path(path)
    text = path.read_text()
    return parse_scenario(text, str(path))


def bundled_names():
    root = resources.files("rydlock") / "scenarios"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def bundled_scenario(name: str) -> Scenario:
    """One of the scenarios shipped with the package, e.g. ``fig3_50F.cfg``."""
    if not name.endswith(".cfg"):
        name += ".cfg"
    res = resources.files("rydlock") / "scenarios" / name
    return parse_scenario(res.read_text(), f"bundled:{name}")
