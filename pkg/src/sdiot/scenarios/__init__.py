"""Scenario files, the run harness and the coverage matrix."""
from .spec import AttackSpec, PolicySpec, ScenarioSpec, parse_scenario, render_scenario, load_scenario
from .runner import AttackOutcome, RunReport, run_scenario, write_outputs
from .matrix import (COVERAGE, MODULE_NAMES, Cell, CellResult, MatrixReport, coverage, load_library,
                     matrix_cells, matrix_suite)

__all__ = [
    "AttackSpec", "PolicySpec", "ScenarioSpec", "parse_scenario", "render_scenario", "load_scenario",
    "AttackOutcome", "RunReport", "run_scenario", "write_outputs",
    "COVERAGE", "MODULE_NAMES", "Cell", "CellResult", "MatrixReport", "coverage", "load_library",
    "matrix_cells", "matrix_suite",
]
