"""bsnsim: deterministic discrete-event simulator for body sensor network MACs."""

from .core import SimTime, Simulator
from .scenario import Scenario, load_scenario

__version__ = "0.1.0"

__all__ = ["SimTime", "Simulator", "Scenario", "load_scenario", "__version__"]
