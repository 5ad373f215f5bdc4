"""Three-step servo chain: configuration, discriminators and simulation."""

from .chain import ChainResult, ChannelSummary, RunSummary, run_locked_chain
from .config import (ENVELOPE_DT, WAVEFORM_DT, Actuator, ActuatorLoop, ChannelConfig, ConfigError,
                     PidGains, ServoChainConfig, current, default_chain_config, piezo)
from .control import (ActuatorState, LoopMargins, PidState, actuator_response, loop_margins,
                      open_loop_response, pid_update)
from .discriminators import Tables, build_tables, velocity_ratios

__all__ = [
    "Actuator", "ActuatorLoop", "ActuatorState", "ChainResult", "ChannelConfig", "ChannelSummary",
    "ConfigError", "ENVELOPE_DT", "LoopMargins", "PidGains", "PidState", "RunSummary",
    "ServoChainConfig", "Tables", "WAVEFORM_DT", "actuator_response", "build_tables", "current",
    "default_chain_config", "loop_margins", "open_loop_response", "piezo", "pid_update",
    "run_locked_chain", "velocity_ratios",
]
