"""phconv: energy-based simulation and passivity audit for grid-tied
AC/DC converters feeding constant-power loads."""

__version__ = "0.1.0"

from .controllers import PhControllerGains, PiControllerGains
from .ph_core import EnergyState, PhStructure, validate_structure
from .plant import GridProfile, GridSegment, LoadProfile, PlantParams
from .sim_engine import ControllerConfig, RunResult, Scenario, TrajectoryRecord, run_scenario

__all__ = [
    "ControllerConfig",
    "EnergyState",
    "GridProfile",
    "GridSegment",
    "LoadProfile",
    "PhControllerGains",
    "PhStructure",
    "PiControllerGains",
    "PlantParams",
    "RunResult",
    "Scenario",
    "TrajectoryRecord",
    "run_scenario",
    "validate_structure",
    "__version__",
]
