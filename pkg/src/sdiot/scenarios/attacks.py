"""Attack kinds: adversary scripts plus the test of whether the goal was met.

Outcome rule applied by the runner:

* prevention-class attacks are ``prevented`` when their goal was never met;
* otherwise ``detected`` when an attributable alert fired at or after the
  attack start, else ``missed``.

Detection-class attacks (floods, scans, spoofing, impersonation, replay
injection) are never "prevented"; they can only be detected or missed.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .. import appmsg, ecc, privacy, southbound as sb
from ..authn import AuthFrame
from ..errors import EncodingError
from ..mitigation import AlertKind
from ..simnet import AdversaryScript, FakeIdSend, Flood, Replay, Tamper, Tap
from ..southbound import MsgType, Packet
from .spec import AttackSpec

HEADER = 4 + 9  # southbound header + src/dst/type of a data frame


@dataclass
class AttackRuntime:
    index: int
    spec: AttackSpec
    script: Optional[AdversaryScript]
    start: int
    kinds: frozenset
    subjects: frozenset
    detection_only: bool
    rate_based: bool
    evaluate: Callable[[object], tuple[bool, str]]
    state: dict = field(default_factory=dict)


def data_frame(src: int, dst: int, t: MsgType, payload: bytes) -> bytes:
    return sb.encode(sb.Data(Packet(src, dst, t, payload)))


def _packets(frames):
    """Data packets in a transcript, unwrapping PacketIn/PacketOut envelopes."""
    for f in frames:
        try:
            msg = sb.decode(f)
            if isinstance(msg, (sb.PacketIn, sb.PacketOut)):
                msg = sb.decode(msg.frame)
        except EncodingError:
            continue
        if isinstance(msg, sb.Data):
            yield msg.packet


def _is_reading_from(node):
    def sel(frame: bytes) -> bool:
        try:
            msg = sb.decode(frame)
        except EncodingError:
            return False
        return isinstance(msg, sb.Data) and msg.packet.src == node and msg.packet.msg_type is MsgType.READING
    return sel


def _aggregate_wrong(ctx) -> tuple[bool, str]:
    bad = ctx.wrong_rounds()
    return bool(bad), f"wrong aggregate rounds: {len(bad)}"


# ---------------------------------------------------------------- builders

def _eavesdrop(i, a: AttackSpec, ctx) -> AttackRuntime:
    victim = a["victim"]
    head = ctx.net.head_of(victim)
    link = (victim, head) if a["link"] == "uplink" else (head, 0)
    script = AdversaryScript([Tap(link)], name=f"eavesdrop{i}")

    def evaluate(ctx, adv_name=script.name):
        frames = ctx.adversary(adv_name).transcript(link)
        truth = ctx.agents[victim].truth
        hits = 0
        for pkt in _packets(frames):
            if pkt.src != victim or pkt.msg_type is not MsgType.READING:
                continue
            try:
                seq, value = privacy.parse_plain_reading(pkt.payload)
            except privacy.IntegrityError:
                continue
            hits += truth.get(seq) == value
        return hits > 0, f"readings recovered: {hits} of {len(frames)} frames"
    return AttackRuntime(i, a, script, a["start"], frozenset(), frozenset({victim}), False, False, evaluate)


def _harvest(i, a, ctx) -> AttackRuntime:
    attacker, victims = a["attacker"], a["victims"]
    head = ctx.net.head_of(attacker)
    n = len(victims)

    def make(k, t):
        return data_frame(attacker, victims[k % n], MsgType.SERVICE, appmsg.StorageRead().encode())
    script = AdversaryScript([FakeIdSend((attacker, head), a["start"], attacker, make, n * a["sweeps"], a["interval"]),
                              Tap((head, attacker))], name=f"harvest{i}")

    def evaluate(ctx, name=script.name):
        got = 0
        for pkt in _packets(ctx.adversary(name).transcript((head, attacker))):
            if pkt.msg_type is MsgType.SERVICE and pkt.src in victims:
                try:
                    msg = appmsg.decode_service(pkt.payload)
                except EncodingError:
                    continue
                if isinstance(msg, appmsg.StorageData) and msg.requester == attacker:
                    got += len(msg.values)
        return got > 0, f"stored readings obtained: {got}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.SCAN}), frozenset({attacker}),
                         False, True, evaluate)


def _unauthorized(i, a, ctx) -> AttackRuntime:
    attacker, target = a["attacker"], a["target"]
    head = ctx.net.head_of(attacker)
    command = b"set:reporting=off"

    def make(k, t):
        return data_frame(attacker, target, MsgType.CONTROL, appmsg.ConfigCommand(command).encode())
    script = AdversaryScript([FakeIdSend((attacker, head), a["start"], attacker, make, a["count"], a["interval"])],
                             name=f"unauthorized{i}")

    def evaluate(ctx):
        if target == 0:
            n = sum(1 for _, src, _p in ctx.controller.sink.controls if src == attacker)
        else:
            n = sum(1 for _, src, _c in ctx.agents[target].config_log if src == attacker)
        return n > 0, f"commands executed: {n}"
    return AttackRuntime(i, a, script, a["start"], frozenset(), frozenset({attacker}), False, False, evaluate)


def _flood_rate(a, ctx) -> float:
    return a["rate"] if a["rate"] > 0 else a["multiplier"] / ctx.spec.reading_period


def _flood_action(attacker, a, ctx):
    head = ctx.net.head_of(attacker)

    def make(k, t):
        return data_frame(attacker, 0, MsgType.SERVICE, appmsg.ServiceRequest(k.to_bytes(4, "big")).encode())
    return Flood((attacker, head), _flood_rate(a, ctx), a["start"], a["end"], make)


def _delivered(ctx, attackers, start, end) -> int:
    n = 0
    for src in attackers:
        n += sum(1 for t in ctx.controller.sink.delivered_ticks.get((src, 0, int(MsgType.SERVICE)), ())
                 if start <= t)
    return n


def _flood(i, a, ctx) -> AttackRuntime:
    attacker = a["attacker"]
    script = AdversaryScript([_flood_action(attacker, a, ctx)], name=f"flood{i}")

    def evaluate(ctx):
        n = _delivered(ctx, [attacker], a["start"], a["end"])
        return n > 0, f"flood packets delivered: {n}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.DOS, AlertKind.DDOS}),
                         frozenset({attacker}), True, True, evaluate)


def _ddos(i, a, ctx) -> AttackRuntime:
    attackers = a["attackers"]
    script = AdversaryScript([_flood_action(x, a, ctx) for x in attackers], name=f"ddos{i}")

    def evaluate(ctx):
        n = _delivered(ctx, attackers, a["start"], a["end"])
        return n > 0, f"flood packets delivered: {n}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.DDOS}), frozenset(attackers),
                         True, True, evaluate)


def _scan(i, a, ctx) -> AttackRuntime:
    attacker = a["attacker"]
    head = ctx.net.head_of(attacker)
    devices = [d for d in ctx.spec.device_ids if d != attacker]
    spare = max(ctx.spec.device_ids) + 1000
    targets = (devices + list(range(spare, spare + a["targets"])))[:a["targets"]]
    control = a["msg_type"] == "control"

    def make(k, t):
        dst = targets[k % len(targets)]
        if control:
            return data_frame(attacker, dst, MsgType.CONTROL, appmsg.ConfigCommand(b"route:via=%d" % attacker).encode())
        return data_frame(attacker, dst, MsgType.SERVICE, appmsg.StorageRead().encode())
    script = AdversaryScript([FakeIdSend((attacker, head), a["start"], attacker, make, len(targets), a["interval"])],
                             name=f"scan{i}")

    def evaluate(ctx):
        return True, f"probes sent: {len(targets)}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.SCAN}), frozenset({attacker}),
                         True, True, evaluate)


def _spoof(i, a, ctx) -> AttackRuntime:
    victim, rogue = a["victim"], a["rogue"]
    head = ctx.net.head_of(victim)
    state = {"accepted": 0}
    rng = random.Random(ctx.seed_for("spoof", i))
    P = ctx.spec.reading_period

    def make(k, t):
        seq = t // P
        if ctx.spec.modules and "privacy" in ctx.spec.modules:
            forged = ecc.generate_keypair(ctx.curve, rng)
            cred = privacy.Credential(victim, forged, ctx.gateway_pub, privacy.SMC_MODULUS, 0, 1 << 62)
            payload = privacy.protect_reading(cred, rng.randrange(1000), seq=seq, tick=t, rng=rng).encode(ctx.curve)
        else:
            payload = privacy.plain_reading(seq, rng.randrange(1000))
        return data_frame(victim, 0, MsgType.READING, payload)
    script = AdversaryScript([FakeIdSend((rogue, head), a["start"], victim, make, a["count"], a["interval"])],
                             rogue_nodes=[(rogue, head)], name=f"spoof{i}")

    def evaluate(ctx):
        return True, f"forged frames: {a['count']}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.SPOOFING}), frozenset({victim}),
                         True, False, evaluate, state)


def _auth_attack(i, a, ctx, detection_only: bool) -> AttackRuntime:
    victim, rogue = a["victim"], a["rogue"]
    head = ctx.net.head_of(victim)
    rng = random.Random(ctx.seed_for("auth", i))
    sessions: set[int] = set()
    name = f"{a.kind}{i}"

    def make(k, t):
        sid = rng.getrandbits(64)
        sessions.add(sid)
        return data_frame(victim, 0, MsgType.AUTH, AuthFrame(sid, rng.getrandbits(128).to_bytes(16, "big")).encode())

    def react(adv, frame, tick):
        for pkt in _packets([frame]):
            if pkt.dst != victim or pkt.msg_type is not MsgType.AUTH:
                continue
            try:
                af = AuthFrame.decode(pkt.payload)
            except Exception:
                continue
            if af.session in sessions and not af.is_challenge:
                guess = rng.getrandbits(256).to_bytes(32, "big")
                adv.inject((rogue, head), data_frame(victim, 0, MsgType.AUTH, AuthFrame(af.session, af.nonce, guess).encode()))
    script = AdversaryScript([FakeIdSend((rogue, head), a["start"], victim, make, a["count"], a["interval"]),
                              Tap((head, victim), react)], rogue_nodes=[(rogue, head)], name=name)

    def evaluate(ctx):
        granted = [s for _, node, s in ctx.controller.sink.grants if node == victim and s in sessions]
        return bool(granted), f"attacker sessions granted: {len(granted)} of {len(sessions)}"
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.IMPERSONATION}), frozenset({victim}),
                         detection_only, False, evaluate)


def _inject(i, a, ctx) -> AttackRuntime:
    victim = a["victim"]
    head = ctx.net.head_of(victim)
    script = AdversaryScript([Replay((victim, head), a["at"], a["index"], a["copies"], _is_reading_from(victim))],
                             name=f"inject{i}")

    def evaluate(ctx):
        return True, f"replayed copies: {a['copies']}"
    return AttackRuntime(i, a, script, a["at"], frozenset({AlertKind.INJECTION}), frozenset({victim}),
                         True, False, evaluate)


def _tamper(i, a, ctx) -> AttackRuntime:
    victim = a["victim"]
    head = ctx.net.head_of(victim)
    sel = _is_reading_from(victim)

    def mutate(frame, rng):
        if not sel(frame) or len(frame) <= HEADER:
            return None
        pos = HEADER + rng.randrange(len(frame) - HEADER)
        buf = bytearray(frame)
        buf[pos] ^= 1 << rng.randrange(8)
        return bytes(buf)
    script = AdversaryScript([Tamper((victim, head), a["start"], a["end"], mutate)], name=f"tamper{i}")
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.SPOOFING, AlertKind.INJECTION}),
                         frozenset({victim}), False, False, _aggregate_wrong)


def _modify(i, a, ctx) -> AttackRuntime:
    victim = a["victim"]
    head = ctx.net.head_of(victim)
    sel = _is_reading_from(victim)
    delta = a["delta"]

    def mutate(frame, rng):
        if not sel(frame):
            return None
        pkt = sb.decode(frame).packet
        try:
            seq, value = privacy.parse_plain_reading(pkt.payload)
            payload = privacy.plain_reading(seq, value + delta)
        except privacy.IntegrityError:
            # opaque payload: flip a bit near the end of the ciphertext
            buf = bytearray(pkt.payload)
            buf[len(buf) // 2] ^= 0x01
            payload = bytes(buf)
        return data_frame(pkt.src, pkt.dst, pkt.msg_type, payload)
    script = AdversaryScript([Tamper((victim, head), a["start"], a["end"], mutate)], name=f"modify{i}")
    return AttackRuntime(i, a, script, a["start"], frozenset({AlertKind.SPOOFING, AlertKind.INJECTION}),
                         frozenset({victim}), False, False, _aggregate_wrong)


def _rogue_join(i, a, ctx) -> AttackRuntime:
    rogue, head, claim = a["rogue"], a["head"], a["claim"]
    rng = random.Random(ctx.seed_for("rogue", i))
    own = ecc.generate_keypair(ctx.curve, rng)
    if a["copy_pubkey"] and claim in ctx.provisioning:
        pub = ctx.provisioning[claim]
    else:
        pub = ecc.encode_point(ctx.curve, own.public)

    def make(k, t):
        return sb.encode(sb.JoinRequest(claim, pub))

    def react(adv, frame, tick):
        for pkt in _packets([frame]):
            if pkt.dst == claim and pkt.msg_type is MsgType.AUTH:
                try:
                    af = AuthFrame.decode(pkt.payload)
                except Exception:
                    continue
                if af.is_challenge:
                    guess = rng.getrandbits(256).to_bytes(32, "big")
                    nonce = rng.getrandbits(128).to_bytes(16, "big")
                    adv.inject((rogue, head), data_frame(claim, 0, MsgType.AUTH, AuthFrame(af.session, nonce, guess).encode()))
    script = AdversaryScript([FakeIdSend((rogue, head), a["at"], claim, make, 1, 1), Tap((head, rogue), react)],
                             rogue_nodes=[(rogue, head)], name=f"rogue_join{i}")

    def evaluate(ctx):
        rec = ctx.controller.record(claim)
        ok = rec is not None and rec.port == rogue and rec.registered_at is not None
        return ok, "rogue registered" if ok else "rogue not registered"
    return AttackRuntime(i, a, script, a["at"], frozenset({AlertKind.IMPERSONATION}), frozenset({claim}),
                         False, False, evaluate)


def _defect(i, a, ctx) -> AttackRuntime:
    node = a["node"]
    ctx.agents[node].cfg.cooperation = a["cooperation"]

    def evaluate(ctx):
        served = [d for d in ctx.controller.sink.services if d.allow and node in d.nodes]
        return bool(served), f"service requests served by defector: {len(served)}"
    return AttackRuntime(i, a, None, 0, frozenset(), frozenset({node}), False, False, evaluate)


BUILDERS = {
    "eavesdrop": _eavesdrop,
    "harvest": _harvest,
    "unauthorized": _unauthorized,
    "flood": _flood,
    "ddos": _ddos,
    "scan": _scan,
    "spoof": _spoof,
    "impersonate": lambda i, a, ctx: _auth_attack(i, a, ctx, True),
    "unauth_access": lambda i, a, ctx: _auth_attack(i, a, ctx, False),
    "inject": _inject,
    "tamper": _tamper,
    "modify": _modify,
    "rogue_join": _rogue_join,
    "defect": _defect,
}


def build_attack(index: int, spec: AttackSpec, ctx) -> AttackRuntime:
    return BUILDERS[spec.kind](index, spec, ctx)
