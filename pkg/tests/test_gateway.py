import random
import types

import pytest
from hypothesis import given, settings, strategies as st

from sdiot import ecc, privacy
from sdiot.errors import AggregationError, ConfigError
from sdiot.gateway import (MODULES, AuditLog, ControllerConfig, DeviceRecord, DeviceStatus, SecurityController,
                           check_modules, collect_and_aggregate, without)
from sdiot.scenarios import ScenarioSpec, run_scenario
from sdiot.southbound import MsgType, Packet

P = 20


def test_module_dependencies():
    assert check_modules(MODULES) == frozenset(MODULES)
    with pytest.raises(ConfigError) as info:
        check_modules({"privacy"})
    assert info.value.field == "enabled"
    with pytest.raises(ConfigError):
        check_modules({"firewall"})
    assert without(MODULES, "keymgmt") == frozenset({"trust", "abac", "mitigation"})
    assert without(MODULES, "privacy") == frozenset(MODULES) - {"privacy"}


def test_audit_log_format_and_count():
    log = AuditLog()
    log(5, "mitigation", "flow", src=3, nodes=(3, 4), score=0.5, note="a b")
    log(6, "gateway", "hello", head=1)
    assert log.lines[0] == "tick=5 comp=mitigation ev=flow src=3 nodes=3,4 score=0.500000 note=a_b"
    assert log.count("mitigation") == 1 and log.count(ev="hello") == 1 and log.count("gateway", "flow") == 0
    assert log.text().count("\n") == 2


@settings(max_examples=100)
@given(st.lists(st.integers(0, privacy.MAX_READING), min_size=1, max_size=20), st.integers(0, 2 ** 32))
def test_collect_and_aggregate_matches_plain_sum(values, seed):
    rng = random.Random(seed)
    sets = [privacy.smc_split(v, 3, rng=rng, owner=i) for i, v in enumerate(values)]
    assert collect_and_aggregate(sets, 3).value == sum(values)


def test_collect_refuses_missing_share():
    s = privacy.smc_split(5, 3, rng=random.Random(0), owner=1)
    broken = privacy.SmcShareSet(1, (s.shares[0], None, s.shares[2]), s.modulus)
    with pytest.raises(AggregationError):
        collect_and_aggregate([broken], 3)


# -- sequence acceptance against an independent model

def _controller():
    net = types.SimpleNamespace(tick=0)
    cfg = ControllerConfig(modules=frozenset({"mitigation"}), reading_period=P)
    gw = ecc.generate_keypair(ecc.TOY, random.Random(1))
    ctl = SecurityController(net, cfg, gw, {}, random.Random(2))
    for node, first in ((3, 0), (4, 2)):
        ctl.devices[node] = DeviceRecord(node, DeviceStatus.REGISTERED, access=True, first_round=first)
    return net, ctl


ops = st.lists(st.one_of(
    st.tuples(st.just("send"), st.sampled_from([3, 4, 9]), st.integers(0, 8), st.integers(0, 100)),
    st.tuples(st.just("wait"), st.integers(1, 15)),
    st.tuples(st.just("close")),
), max_size=60)


@settings(max_examples=150, deadline=None)
@given(ops)
def test_reading_sequence_acceptance_matches_model(script):
    net, ctl = _controller()
    first = {3: 0, 4: 2}
    accepted: dict[int, dict[int, int]] = {}
    closed = -1
    sums = []
    delivered: dict[int, int] = {}
    for op in script:
        if op[0] == "wait":
            net.tick += op[1]
        elif op[0] == "close":
            if closed + 1 <= net.tick // P:
                closed += 1
                ctl.close_round(closed)
                got = accepted.pop(closed, {})
                if got:
                    sums.append((closed, sum(got.values())))
        else:
            _, node, seq, value = op
            ok = (node in first and seq <= net.tick // P and seq > closed and seq >= first[node]
                  and node not in accepted.get(seq, {}))
            ctl.handle_packet(Packet(node, 0, MsgType.READING, privacy.plain_reading(seq, value)), 30, 1, None)
            if ok:
                accepted.setdefault(seq, {})[node] = value
                delivered[node] = delivered.get(node, 0) + 1
            assert ctl.sink.delivered[(node, 0, int(MsgType.READING))] == delivered.get(node, 0)
    assert [(r, res.value) for r, res, _ in ctl.sink.aggregates] == sums
    assert ctl.observed == sum(f.packets for f in ctl.flows.values())


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([3, 4, 20]), st.sampled_from([0, 5]), st.sampled_from(list(MsgType)),
                          st.integers(1, 200)), max_size=80))
def test_interleaved_flows_grouped_by_key(packets):
    net, ctl = _controller()
    for i, (src, dst, t, size) in enumerate(packets):
        net.tick = i
        ctl.account_flow(Packet(src, dst, t), size, 1)
    groups: dict = {}
    for i, (src, dst, t, size) in enumerate(packets):
        g = groups.setdefault((src, dst, int(t)), [0, 0, i, i])
        g[0] += 1
        g[1] += size
        g[3] = i
    assert {k: [f.packets, f.bytes, f.first_seen, f.last_seen] for k, f in ctl.flows.items()} == groups
    assert ctl.observed == len(packets)


def test_fifty_joins_get_distinct_keys_and_credentials():
    report = run_scenario(ScenarioSpec(name="fifty", seed=171, duration=120, clusters=5, devices_per_cluster=10))
    c = report.context.controller
    reg = c.registered()
    assert len(reg) == 50
    keys = {ecc.encode_point(c.curve, c.km.live_public(n)) for n in reg}
    assert len(keys) == 50
    # the privacy credential wraps the operational keypair key management issued
    assert all(c.creds.get(n).public == c.km.live_public(n) for n in reg)
    assert len({c.km.gateway_key(n) for n in reg}) == 50
    assert all(c.record(n).credential_ref and c.record(n).policy_ref for n in reg)
