import random

import pytest
from hypothesis import given, settings, strategies as st

from sdiot.errors import ConfigError
from sdiot.simnet import (AdversaryScript, EventKind, FakeIdSend, Flood, Replay, Role, Tamper, Tap, TopologySpec,
                          attach_adversary, build_topology, derive_seed)


class Recorder:
    def __init__(self):
        self.got = []

    def on_frame(self, net, frame, sender):
        self.got.append((net.tick, sender, frame))


def test_topology_numbering():
    net = build_topology(TopologySpec(2, 3))
    assert net.heads == [1, 2]
    assert net.devices == [3, 4, 5, 6, 7, 8]
    assert net.clusters == {0: [3, 4, 5], 1: [6, 7, 8]}
    assert net.head_of(7) == 2 and net.has_link(7, 2) and not net.has_link(7, 0)
    assert net.nodes[0].role is Role.GATEWAY


@pytest.mark.parametrize("spec", [TopologySpec(0, 1), TopologySpec(1, 0), TopologySpec(1, 1, 1.5),
                                  TopologySpec(1, 1, link_delay=0), TopologySpec(1, 1, seed=-1)])
def test_topology_validation(spec):
    with pytest.raises(ConfigError):
        build_topology(spec)


def test_delivery_after_link_delay_in_fifo_order():
    net = build_topology(TopologySpec(1, 2, link_delay=3))
    rec = Recorder()
    net.attach(1, rec)
    net.send(2, 1, b"a")
    net.send(3, 1, b"b")
    net.run_until(2)
    assert rec.got == []
    net.run_until(10)
    assert rec.got == [(3, 2, b"a"), (3, 3, b"b")]
    assert net.links[(2, 1)].delivers == 1


def test_send_on_missing_link_and_past_schedule_fail():
    net = build_topology(TopologySpec(1, 1))
    with pytest.raises(ConfigError):
        net.send(2, 0, b"x")
    net.run_until(5)
    with pytest.raises(ValueError):
        net.schedule(4, 0, "late", lambda: None)


def test_loss_rate_extremes():
    for rate, want in ((0.0, 50), (1.0, 0)):
        net = build_topology(TopologySpec(1, 1, link_loss_rate=rate))
        rec = Recorder()
        net.attach(1, rec)
        for _ in range(50):
            net.send(2, 1, b"x")
        net.run_until(5)
        assert len(rec.got) == want


def _lossy_run(seed):
    net = build_topology(TopologySpec(2, 2, link_loss_rate=0.3, seed=seed))
    for n in net.nodes:
        net.attach(n, Recorder())
    for t in range(40):
        net.schedule(t, 3, "s", lambda t=t: net.send(3, 1, bytes([t])))
    net.run_until(50)
    return net.log.to_bytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 64 - 1))
def test_event_log_is_deterministic(seed):
    assert _lossy_run(seed) == _lossy_run(seed)


def test_rng_streams_independent_and_stable():
    net = build_topology(TopologySpec(1, 1, seed=42))
    a = net.rng(2, "device").random()
    assert net.rng(2, "device") is net.rng(2, "device")
    assert random.Random(derive_seed(42, 2, "device")).random() == a
    assert derive_seed(42, 2, "device") != derive_seed(42, 2, "other")


def test_tap_records_and_tamper_rewrites():
    net = build_topology(TopologySpec(1, 1))
    rec = Recorder()
    net.attach(1, rec)
    adv = attach_adversary(net, AdversaryScript([
        Tap((2, 1)),
        Tamper((2, 1), 5, 10, lambda f, rng: f.upper()),
    ]))
    for t in (1, 6, 12):
        net.schedule(t, 2, "s", lambda: net.send(2, 1, b"abc"))
    net.run_until(20)
    assert adv.transcript((2, 1)) == [b"abc"] * 3   # taps see the frame before rewriting
    assert [f for _, _, f in rec.got] == [b"abc", b"ABC", b"abc"]
    assert adv.tampered == 1
    assert any(e.kind is EventKind.ADVERSARY and e.payload == b"tamper" for e in net.log)


def test_replay_flood_and_fake_id():
    net = build_topology(TopologySpec(1, 1))
    rec = Recorder()
    net.attach(1, rec)
    attach_adversary(net, AdversaryScript([
        Replay((2, 1), at=10, index=0, copies=3),
        Flood((2, 1), rate=0.5, start=20, end=30, make_frame=lambda i, t: b"F"),
        FakeIdSend((9, 1), at=40, claimed=2, make_frame=lambda i, t: b"I%d" % i, count=2, interval=5),
    ], rogue_nodes=[(9, 1)]))
    net.send(2, 1, b"orig")
    net.run_until(60)
    frames = [f for _, _, f in rec.got]
    assert frames.count(b"orig") == 4
    assert frames.count(b"F") == 5
    assert [(t, s, f) for t, s, f in rec.got if f.startswith(b"I")] == [(41, 9, b"I0"), (46, 9, b"I1")]
    assert net.nodes[9].role is Role.ROGUE


def test_adversary_script_validation():
    net = build_topology(TopologySpec(1, 1))
    with pytest.raises(ConfigError):
        attach_adversary(net, AdversaryScript([Tap((2, 0))]))
    with pytest.raises(ConfigError):
        attach_adversary(net, AdversaryScript([], rogue_nodes=[(9, 2)]))  # 2 is a device, not a head


def test_loss_matches_replayed_generator():
    spec = TopologySpec(1, 1, link_loss_rate=0.25, seed=99)
    net = build_topology(spec)
    net.attach(1, Recorder())
    for _ in range(1000):
        net.send(2, 1, b"x")
    net.run_until(5)
    replay = random.Random(derive_seed(99, 2, "link:1"))
    expect = sum(replay.random() < 0.25 for _ in range(1000))
    assert net.links[(2, 1)].drops == expect
    assert sum(e.kind is EventKind.DROP for e in net.log) == expect
    assert 150 < expect < 350


def test_replayed_frame_shows_as_duplicate_delivery():
    net = build_topology(TopologySpec(1, 1))
    net.attach(1, Recorder())
    attach_adversary(net, AdversaryScript([Replay((2, 1), at=10, index=0)]))
    net.send(2, 1, b"F")
    net.run_until(20)
    delivered = [e.tick for e in net.log if e.kind is EventKind.DELIVER and e.payload == b"F"]
    assert delivered == [1, 11]
