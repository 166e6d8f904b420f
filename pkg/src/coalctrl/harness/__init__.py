from .config import ConfigError, SimConfig, load_config, resolve_config, echo_config
from .driver import (FatalSynthesisError, NumericalAbortError, run,
                     synthesize_all)
from .store import GainStore, TopologyRecord, load_gains, save_gains
from .trace import Metrics, Trace, export_trace, load_steps, metrics

__all__ = [
    "ConfigError", "SimConfig", "load_config", "resolve_config", "echo_config",
    "FatalSynthesisError", "NumericalAbortError", "run", "synthesize_all",
    "GainStore", "TopologyRecord", "load_gains", "save_gains",
    "Metrics", "Trace", "export_trace", "load_steps", "metrics",
]
