"""Time-slice vehicular edge computing simulator."""
from __future__ import annotations

from .engine import RunReport, Simulation, run
from .scenario import Scenario, desk_scenario, full_scenario, validate_and_load

__all__ = ["RunReport", "Simulation", "run", "Scenario", "desk_scenario", "full_scenario",
           "validate_and_load"]
__version__ = "0.1.0"
