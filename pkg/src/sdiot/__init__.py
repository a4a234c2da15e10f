"""Deterministic SDN-managed IoT network with a security gateway.

The gateway hosts a collection (IoT) controller and a security controller
with six pluggable modules: privacy, trust, keymgmt, authn, abac and
mitigation.  Scenarios script attacks against a simulated network and the
coverage matrix checks which module stops which threat.
"""
from .ecc import P192, TOY, CURVES
from .gateway import MODULES, AuditLog, ControllerConfig, SecurityController
from .scenarios import (ScenarioSpec, RunReport, coverage, load_scenario, matrix_suite, parse_scenario,
                        run_scenario)

__version__ = "0.1.0"

__all__ = ["P192", "TOY", "CURVES", "MODULES", "AuditLog", "ControllerConfig", "SecurityController",
           "ScenarioSpec", "RunReport", "coverage", "load_scenario", "matrix_suite", "parse_scenario",
           "run_scenario", "__version__"]
