"""Threat/module coverage table and the paired on/off scenario suite.

Every checked (threat, module) cell names a scenario from the bundled
library.  The cell passes when the scenario with all of its modules enabled
prevents or detects each scripted attack, and the same scenario with that
module switched off lets at least one attack through.
"""
from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from ..errors import ConfigError
from ..gateway import without
from .runner import DETECTED, MISSED, RunReport, run_scenario
from .spec import ScenarioSpec, load_scenario

MODULE_NAMES = {
    "privacy": "Privacy",
    "trust": "Trust",
    "keymgmt": "KeyManagement",
    "authn": "Authentication",
    "abac": "AccessControl",
    "mitigation": "MitigationAgent",
}
_MODULE_KEYS = {v.lower(): k for k, v in MODULE_NAMES.items()}
_MODULE_KEYS.update({k: k for k in MODULE_NAMES})
_MODULE_KEYS.update({"key management": "keymgmt", "authentication": "authn", "access control": "abac",
                     "mitigation agent": "mitigation", "security attack mitigation agent": "mitigation"})

_P, _T, _K, _A, _C, _M = (MODULE_NAMES[k] for k in ("privacy", "trust", "keymgmt", "authn", "abac", "mitigation"))

COVERAGE: dict[str, frozenset[str]] = {
    "Confidentiality and Privacy": frozenset({_P, _K}),
    "Handling Security Attacks": frozenset({_M}),
    "Authentication in IoT": frozenset({_K, _A}),
    "Identity Spoofing Attack": frozenset({_M}),
    "Access Control in IoT": frozenset({_C}),
    "Trust in IoT": frozenset({_T}),
    "Attacks on Availability": frozenset(),
    "Impersonation Attacks": frozenset({_M}),
    "Eavesdropping": frozenset({_P, _K, _M}),
    "Data Corruption": frozenset({_P, _K}),
    "Data Modification": frozenset({_P, _K}),
    "Secure Routing and Forwarding in IoT": frozenset({_A, _M}),
    "Robustness and resilience management in IoT": frozenset({_M}),
    "Audit Control for IoT": frozenset({_M}),
    "Secure Network Access": frozenset({_K, _A}),
    "Secure Storage": frozenset({_C}),
    "Tamper Resistance": frozenset({_C}),
    "User Identification and Identity Management": frozenset({_A}),
}
THREATS = tuple(COVERAGE)
_THREAT_KEYS = {t.lower(): t for t in THREATS}

# The availability row has no check mark although the mitigation agent is
# described as handling DoS; it is exercised separately and reported apart.
INCONSISTENT_ROWS = {"Attacks on Availability": ("mitigation", "dos")}

RATE_BASED = frozenset({"flood", "ddos", "scan", "harvest"})


def coverage(threat: str) -> frozenset[str]:
    """Modules responsible for ``threat`` (case-insensitive row name)."""
    key = _THREAT_KEYS.get(threat.strip().lower())
    if key is None:
        raise ConfigError(f"unknown threat {threat!r}", field="threat")
    return COVERAGE[key]


def module_key(name: str) -> str:
    key = _MODULE_KEYS.get(name.strip().lower())
    if key is None:
        raise ConfigError(f"unknown module {name!r}", field="module")
    return key


@dataclass(frozen=True)
class Cell:
    threat: str
    module: str          # module key, e.g. "keymgmt"
    scenario: str        # library scenario stem
    check: Optional[str] = None  # extra judgement beyond attack outcomes

    @property
    def module_name(self) -> str:
        return MODULE_NAMES[self.module]


_CELL_SCENARIOS = {
    ("Confidentiality and Privacy", "privacy"): "eavesdrop_uplink",
    ("Confidentiality and Privacy", "keymgmt"): "eavesdrop_uplink",
    ("Handling Security Attacks", "mitigation"): "attack_mix",
    ("Authentication in IoT", "keymgmt"): "unauth_access",
    ("Authentication in IoT", "authn"): "unauth_access",
    ("Identity Spoofing Attack", "mitigation"): "spoof",
    ("Access Control in IoT", "abac"): "unauthorized_gateway",
    ("Trust in IoT", "trust"): "defect",
    ("Impersonation Attacks", "mitigation"): "impersonate",
    ("Eavesdropping", "privacy"): "eavesdrop_backbone",
    ("Eavesdropping", "keymgmt"): "eavesdrop_backbone",
    ("Eavesdropping", "mitigation"): "harvest_sweep",
    ("Data Corruption", "privacy"): "tamper",
    ("Data Corruption", "keymgmt"): "tamper",
    ("Data Modification", "privacy"): "modify",
    ("Data Modification", "keymgmt"): "modify",
    ("Secure Routing and Forwarding in IoT", "authn"): "rogue_join_copy",
    ("Secure Routing and Forwarding in IoT", "mitigation"): "control_scan",
    ("Robustness and resilience management in IoT", "mitigation"): "ddos",
    ("Audit Control for IoT", "mitigation"): "service_scan",
    ("Secure Network Access", "keymgmt"): "rogue_join_new",
    ("Secure Network Access", "authn"): "rogue_join_new",
    ("Secure Storage", "abac"): "harvest_few",
    ("Tamper Resistance", "abac"): "unauthorized_device",
    ("User Identification and Identity Management", "authn"): "rogue_claim_late",
}
_CHECKS = {("Audit Control for IoT", "mitigation"): "audit"}


def matrix_cells() -> list[Cell]:
    """One cell per check mark, in table order."""
    cells = []
    for threat in THREATS:
        for key in MODULE_NAMES:
            if MODULE_NAMES[key] in COVERAGE[threat]:
                cells.append(Cell(threat, key, _CELL_SCENARIOS.get((threat, key), ""),
                                  _CHECKS.get((threat, key))))
    return cells


# ---------------------------------------------------------------- judging

@dataclass
class CellResult:
    cell: Cell
    status: str                      # pass, fail, unimplemented
    on: list[str] = field(default_factory=list)
    off: list[str] = field(default_factory=list)
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _on_ok(report: RunReport, window: int) -> tuple[bool, str]:
    if not report.outcomes:
        return False, "scenario scripts no attack"
    for o in report.outcomes:
        if o.outcome == MISSED:
            return False, f"{o.kind} missed with the module on"
        if o.outcome == DETECTED and o.kind in RATE_BASED and o.latency > 2 * window:
            return False, f"{o.kind} detected after {o.latency} ticks (> 2 windows)"
    return True, ""


def _off_fails(report: RunReport) -> tuple[bool, str]:
    for o in report.outcomes:
        if o.outcome == MISSED or (o.outcome == DETECTED and o.goal_met and o.kind not in _DETECTION_KINDS):
            return True, ""
    return False, "every attack still stopped with the module off"


_DETECTION_KINDS = frozenset({"flood", "ddos", "scan", "spoof", "impersonate", "inject"})


def _audit_check(on: RunReport, off: RunReport) -> tuple[bool, bool, str]:
    c_on, c_off = on.counters, off.counters
    on_ok = c_on["audit_flow_lines"] == c_on["observed_packets"] > 0 and on.ok
    off_fail = c_off["audit_flow_lines"] < c_off["observed_packets"]
    return on_ok, off_fail, "" if on_ok else "audit trail incomplete with the module on"


def judge(cell: Cell, on: RunReport, off: RunReport, window: int) -> CellResult:
    on_ok, why_on = _on_ok(on, window)
    off_fail, why_off = _off_fails(off)
    if cell.check == "audit":
        a_on, a_off, why = _audit_check(on, off)
        on_ok, off_fail = on_ok and a_on, off_fail and a_off
        why_on = why_on or why
    status = "pass" if on_ok and off_fail else "fail"
    reason = "; ".join(x for x in (why_on if not on_ok else "", why_off if not off_fail else "") if x)
    return CellResult(cell, status, [o.label() for o in on.outcomes], [o.label() for o in off.outcomes], reason)


# ---------------------------------------------------------------- running

def library_dir() -> Path:
    return Path(str(resources.files(__package__).joinpath("library")))


def load_library(directory=None) -> dict[str, ScenarioSpec]:
    d = Path(directory) if directory is not None else library_dir()
    return {p.stem: load_scenario(p) for p in sorted(d.glob("*.scn"))}


def _run(spec: ScenarioSpec) -> RunReport:
    report = run_scenario(spec)
    report.context = None  # not picklable and not needed past judging
    return report


@dataclass
class MatrixReport:
    results: list[CellResult]
    availability: Optional[CellResult] = None

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results)

    def to_text(self) -> str:
        width = max(len(t) for t in THREATS)
        mods = list(MODULE_NAMES)
        head = " " * width + "  " + "  ".join(f"{MODULE_NAMES[m]:<15}" for m in mods)
        lines = [head.rstrip()]
        by = {(r.cell.threat, r.cell.module): r for r in self.results}
        for threat in THREATS:
            row = []
            for m in mods:
                r = by.get((threat, m))
                row.append(f"{(r.status.upper() if r else '.'):<15}")
            note = "  (inconsistent-in-paper; see below)" if threat in INCONSISTENT_ROWS else ""
            lines.append(f"{threat:<{width}}  " + "  ".join(row).rstrip() + note)
        lines += ["", "cells"]
        for r in self.results:
            lines.append(f"  {r.cell.threat} / {r.cell.module_name} [{r.cell.scenario or '-'}]: {r.status}"
                         f"  on={','.join(r.on) or '-'} off={','.join(r.off) or '-'}"
                         + (f"  ({r.reason})" if r.reason else ""))
        if self.availability is not None:
            a = self.availability
            lines += ["", "Attacks on Availability: no check mark in the table, although the mitigation agent "
                          "is described as mitigating DoS; exercised as an extra pair",
                      f"  {a.cell.module_name} [{a.cell.scenario}]: {a.status}  on={','.join(a.on)} "
                      f"off={','.join(a.off)}" + (f"  ({a.reason})" if a.reason else "")]
        passed = sum(r.passed for r in self.results)
        lines += ["", f"{passed}/{len(self.results)} checked cells pass"]
        return "\n".join(lines) + "\n"


def matrix_suite(library=None, jobs: int = 1, out_dir=None,
                 progress: Optional[Callable[[CellResult], None]] = None) -> MatrixReport:
    """Run every checked cell's on/off pair; identical runs are shared."""
    specs = load_library(library)
    cells = matrix_cells()
    extra = Cell("Attacks on Availability", *INCONSISTENT_ROWS["Attacks on Availability"])
    runs: dict[tuple[str, frozenset], ScenarioSpec] = {}
    for cell in cells + [extra]:
        spec = specs.get(cell.scenario)
        if spec is None:
            continue
        runs.setdefault((cell.scenario, spec.modules), spec)
        off = spec.with_modules(without(spec.modules, cell.module))
        runs.setdefault((cell.scenario, off.modules), off)
    keys = sorted(runs, key=lambda k: (k[0], sorted(k[1])))
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = dict(zip(keys, pool.map(_run, [runs[k] for k in keys])))
    else:
        reports = {k: _run(runs[k]) for k in keys}

    def result(cell: Cell) -> CellResult:
        spec = specs.get(cell.scenario)
        if spec is None:
            return CellResult(cell, "unimplemented", reason=f"no scenario {cell.scenario or '(none)'!r}")
        on = reports[(cell.scenario, spec.modules)]
        off = reports[(cell.scenario, without(spec.modules, cell.module))]
        return judge(cell, on, off, spec.detector.window)

    results = []
    for cell in cells:
        r = result(cell)
        results.append(r)
        if progress is not None:
            progress(r)
    report = MatrixReport(results, result(extra))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.txt").write_text(report.to_text())
    return report
