import dataclasses
import types

import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from sdiot import cli
from sdiot.errors import ConfigError, ScenarioError
from sdiot.gateway import MODULES, check_modules, without
from sdiot.mitigation import DetectorConfig
from sdiot.scenarios import (COVERAGE, MODULE_NAMES, AttackSpec, PolicySpec, ScenarioSpec, coverage, load_library,
                             parse_scenario, run_scenario, write_outputs)
from sdiot.scenarios.matrix import Cell, judge, matrix_cells
from sdiot.scenarios.runner import AttackOutcome, RunReport
from sdiot.scenarios.spec import render_scenario

LIB = load_library()


# -- grammar

def _valid_modules(mods):
    try:
        check_modules(mods)
        return True
    except ConfigError:
        return False


@st.composite
def specs(draw):
    clusters = draw(st.integers(1, 3))
    per = draw(st.integers(1, 4))
    devices = list(range(clusters + 1, clusters + 1 + clusters * per))
    dev = st.sampled_from(devices)
    start = draw(st.integers(0, 500))
    rogue = max(devices) + draw(st.integers(1, 50))
    pool = [
        AttackSpec.make("flood", attacker=draw(dev), start=start, end=start + draw(st.integers(1, 300)),
                        multiplier=draw(st.floats(1.0, 100.0))),
        AttackSpec.make("scan", attacker=draw(dev), start=start, targets=draw(st.integers(1, 30)),
                        msg_type=draw(st.sampled_from(["service", "control"]))),
        AttackSpec.make("inject", victim=draw(dev), at=start, copies=draw(st.integers(1, 9))),
        AttackSpec.make("spoof", victim=draw(dev), rogue=rogue, start=start),
        AttackSpec.make("defect", node=draw(dev), cooperation=draw(st.floats(0.0, 1.0))),
        AttackSpec.make("harvest", attacker=draw(dev), victims=draw(st.lists(dev, min_size=1, max_size=3)),
                        start=start),
        AttackSpec.make("eavesdrop", victim=draw(dev), link=draw(st.sampled_from(["uplink", "backbone"]))),
    ]
    attacks = tuple(draw(st.lists(st.sampled_from(pool), max_size=4, unique_by=lambda a: a.kind)))
    modules = draw(st.sets(st.sampled_from(MODULES)).filter(_valid_modules))
    policies = tuple(draw(st.lists(st.sampled_from([
        PolicySpec("sensor", "permit", "AND(role = sensor, dst = 0)"),
        PolicySpec("actuator", "deny", 'ATLEAST(1, msg_type in [control, service], cluster = "x y")'),
    ]), max_size=2)))
    return ScenarioSpec(
        name=draw(st.from_regex(r"[a-z][a-z0-9_]{0,11}", fullmatch=True)),
        seed=draw(st.integers(0, 2 ** 64 - 1)),
        duration=draw(st.integers(1, 100_000)),
        clusters=clusters, devices_per_cluster=per,
        link_loss_rate=draw(st.floats(0.0, 1.0)),
        link_delay=draw(st.integers(1, 5)),
        late_join=tuple(sorted(draw(st.dictionaries(dev, st.integers(0, 900), max_size=2)).items())),
        modules=frozenset(modules),
        reading_period=draw(st.integers(5, 60)),
        aggregate=draw(st.sampled_from(["sum", "mean", "count"])),
        curve=draw(st.sampled_from(["p192", "toy"])),
        key_lifetime=draw(st.integers(1, 10 ** 6)),
        auth_timeout=draw(st.integers(1, 200)),
        alpha=draw(st.floats(0.001, 1.0)),
        tau=draw(st.floats(0.0, 1.0)),
        service_period=draw(st.integers(0, 10)),
        detector=DetectorConfig(window=draw(st.integers(1, 500)), dos_rate_multiplier=draw(st.floats(0.5, 20.0)),
                                scan_fanout_limit=draw(st.integers(1, 20))),
        attacks=attacks, policies=policies,
    )


@settings(max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(specs())
def test_parse_render_is_a_fixpoint(spec):
    text = render_scenario(spec)
    parsed = parse_scenario(text)
    assert parsed == spec
    assert render_scenario(parsed) == text


@pytest.mark.parametrize("old,new,field", [
    ("duration = 1200", "duration = twelve", "duration"),
    ("enabled = privacy, trust, keymgmt, authn, abac, mitigation", "enabled = privacy, trust", "enabled"),
    ("attacker = 3", "attacker = 1", "attacker"),
    ("window = 100", "window = 0", "window"),
    ("multiplier = 50.0", "multiplier = 50.0\nbogus = 1", "bogus"),
    ("[detector]", "[detectors]", "detectors"),
])
def test_errors_name_line_and_field(old, new, field):
    bad = _library_text("dos").replace(old, new, 1)
    with pytest.raises(ScenarioError) as info:
        parse_scenario(bad)
    assert info.value.field == field
    assert f"field '{field}'" in str(info.value)
    assert info.value.line is not None


def _library_text(name):
    from sdiot.scenarios.matrix import library_dir
    return (library_dir() / f"{name}.scn").read_text()


def test_library_files_render_back_to_same_spec():
    assert len(LIB) == 21
    for spec in LIB.values():
        assert parse_scenario(render_scenario(spec)) == spec


# -- coverage lookups

def test_coverage_lookup():
    assert len(COVERAGE) == 18
    assert coverage("eavesdropping") == frozenset({"Privacy", "KeyManagement", "MitigationAgent"})
    assert coverage("Trust in IoT") == frozenset({"Trust"})
    assert coverage("Access Control in IoT") == frozenset({"AccessControl"})
    assert coverage("ATTACKS ON AVAILABILITY") == frozenset()
    with pytest.raises(ConfigError) as info:
        coverage("telepathy")
    assert info.value.field == "threat"
    for mods in COVERAGE.values():
        assert set(mods) <= set(MODULE_NAMES.values())
    assert len(matrix_cells()) == 25


# -- runs

@pytest.fixture(scope="module")
def clean():
    return run_scenario(LIB["clean"], check_secrets=True)


def test_clean_run_has_no_alerts_and_correct_aggregates(clean):
    assert clean.alerts == [] and clean.countermeasures == []
    assert clean.aggregate_correct and clean.aggregates > 50
    assert clean.ok and dict(clean.invariants)["no_secret_on_wire"]
    assert all(v > 0.9 for _, v in clean.node_trust)


def test_eavesdrop_prevented_only_with_privacy():
    spec = LIB["eavesdrop_uplink"]
    on = run_scenario(spec).outcome_of("eavesdrop")
    off = run_scenario(spec.with_modules(without(spec.modules, "privacy"))).outcome_of("eavesdrop")
    assert (on.outcome, on.goal_met) == ("prevented", False)
    assert (off.outcome, off.goal_met) == ("missed", True)


def test_runs_are_deterministic(tmp_path):
    spec = dataclasses.replace(LIB["attack_mix"], duration=900)
    a = write_outputs(run_scenario(spec), tmp_path / "a")
    b = write_outputs(run_scenario(spec), tmp_path / "b")
    for name in ("report.txt", "report.kv", "audit.log"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_report_is_complete(clean):
    text, kv = clean.to_text(), clean.to_kv()
    for section in ("attacks", "aggregates", "alerts", "countermeasures", "trust", "counters", "invariants",
                    "config"):
        assert section in text
    assert "counter.audit_flow_lines=" in kv and "invariant.flow_accounting=1" in kv
    assert clean.counters["audit_flow_lines"] == clean.counters["observed_packets"]
    assert parse_scenario(clean.config) == LIB["clean"]


# -- cell judging on synthetic reports

def _report(*outcomes):
    return RunReport("x", 0, (), 1, list(outcomes), [], [], [], [], True, 0, {}, [], "")


def test_cell_judging_rules():
    cell = Cell("DoS", "mitigation", "dos")
    fast = AttackOutcome(1, "flood", "detected", 100, True, "")
    slow = AttackOutcome(1, "flood", "detected", 300, True, "")
    missed = AttackOutcome(1, "flood", "missed", None, True, "")
    assert judge(cell, _report(fast), _report(missed), 100).passed
    assert not judge(cell, _report(slow), _report(missed), 100).passed
    assert not judge(cell, _report(fast), _report(fast), 100).passed
    # a non-detection attack that succeeds counts against the off-run even if it raised an alert
    tamper = Cell("Data Corruption", "privacy", "tamper")
    caught = AttackOutcome(1, "tamper", "detected", 200, True, "")
    stopped = AttackOutcome(1, "tamper", "prevented", None, False, "")
    assert judge(tamper, _report(stopped), _report(caught), 100).passed
    # a detection-only attack that is still detected with the module off does not
    inj = Cell("Injection", "mitigation", "attack_mix")
    assert not judge(inj, _report(AttackOutcome(1, "inject", "detected", 100, True, "")),
                     _report(AttackOutcome(1, "inject", "detected", 200, True, "")), 100).passed


# -- command line

def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    scn = tmp_path / "s.scn"
    scn.write_text(_library_text("clean"))
    assert cli.main(["validate", str(scn)]) == 0
    scn.write_text(_library_text("clean").replace("duration = 1200", "duration = -5"))
    assert cli.main(["validate", str(scn)]) == 1
    assert "field 'duration'" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.scn")]) == 1

    scn.write_text(_library_text("clean").replace("duration = 1200", "duration = 200"))
    broken = types.SimpleNamespace(ok=False, invariants=[("flow_accounting", False)], to_text=lambda: "",
                                   to_kv=lambda: "", audit="")
    monkeypatch.setattr(cli, "run_scenario", lambda spec, **kw: broken)
    assert cli.main(["run", str(scn), "--out", str(tmp_path / "o")]) == 2

    failing = types.SimpleNamespace(ok=False, to_text=lambda: "0/25 checked cells pass\n")
    monkeypatch.setattr(cli, "matrix_suite", lambda *a, **k: failing)
    assert cli.main(["matrix", "--out", str(tmp_path / "m")]) == 3


def test_cli_run_writes_outputs(tmp_path, capsys):
    scn = tmp_path / "s.scn"
    scn.write_text(_library_text("clean").replace("duration = 1200", "duration = 300"))
    assert cli.main(["run", str(scn), "--seed", "7", "--out", str(tmp_path / "o")]) == 0
    assert {p.name for p in (tmp_path / "o").iterdir()} == {"report.txt", "report.kv", "audit.log"}
    assert "seed 7" in (tmp_path / "o" / "report.txt").read_text()
