"""Gateway: SDN security controller plus IoT (collection) controller.

The two controllers share one process and talk through direct calls.  The
security controller owns registration, flow accounting, policy checks and
countermeasure dispatch; the IoT controller buffers verified readings per
round and releases only combined aggregates to the sink.
"""
from __future__ import annotations

import enum
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from . import abac, appmsg, ecc, privacy, southbound as sb
from .authn import AuthBroker, AuthFrame, Role, SessionState
from .ecc import Curve, KeyPair
from .errors import (AggregationError, AuthError, ConfigError, EccError, EncodingError,
                     FlowModError, KeyRevokedError, RegistrationError)
from .keymgmt import KeyManager
from .mitigation import (CmAction, Countermeasure, DetectorConfig, FlowEvent, MitigationAgent)
from .privacy import AggregateResult, CredentialStore, IntegrityError, SmcShareSet
from .southbound import Action, ActionKind, FlowMatch, FlowMod, FlowModOp, MsgType, Packet
from .trust import TrustStore

log = logging.getLogger(__name__)

GATEWAY = 0
MODULES = ("privacy", "trust", "keymgmt", "authn", "abac", "mitigation")
DEPENDS = {"privacy": ("keymgmt",), "authn": ("keymgmt",)}
FORWARD_PRIORITY_BASE = 100


def check_modules(enabled: Iterable[str]) -> frozenset[str]:
    enabled = frozenset(enabled)
    unknown = sorted(enabled - set(MODULES))
    if unknown:
        raise ConfigError(f"unknown module(s): {', '.join(unknown)}", field="enabled")
    for mod, needs in DEPENDS.items():
        for need in needs:
            if mod in enabled and need not in enabled:
                raise ConfigError(f"module {mod} requires {need}", field="enabled")
    return enabled


def without(enabled: Iterable[str], module: str) -> frozenset[str]:
    """Drop ``module`` and everything that depends on it."""
    out = set(enabled) - {module}
    changed = True
    while changed:
        changed = False
        for mod, needs in DEPENDS.items():
            if mod in out and any(n not in out for n in needs):
                out.discard(mod)
                changed = True
    return frozenset(out)


# ---------------------------------------------------------------- audit

def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}"
    if isinstance(v, (list, tuple, set, frozenset)):
        items = sorted(v) if isinstance(v, (set, frozenset)) else v
        return ",".join(_fmt(x) for x in items) or "-"
    if isinstance(v, enum.Enum):
        return str(v.value)
    return str(v).replace(" ", "_")


class AuditLog:
    """``tick=<u64> comp=<module> ev=<event> k=v...``, one record per line."""

    def __init__(self):
        self.lines: list[str] = []

    def emit(self, tick: int, comp: str, ev: str, **kv) -> None:
        parts = [f"tick={tick}", f"comp={comp}", f"ev={ev}"]
        parts += [f"{k}={_fmt(v)}" for k, v in kv.items()]
        self.lines.append(" ".join(parts))

    __call__ = emit

    def count(self, comp: Optional[str] = None, ev: Optional[str] = None) -> int:
        c = f" comp={comp} " if comp else ""
        e = f" ev={ev}" if ev else ""
        return sum(1 for ln in self.lines if c in ln + " " and (not e or e + " " in ln + " "))

    def text(self) -> str:
        return "".join(ln + "\n" for ln in self.lines)


# ---------------------------------------------------------------- records

class DeviceStatus(enum.Enum):
    PENDING = "pending"
    REGISTERED = "registered"
    REVOKED = "revoked"


@dataclass
class DeviceRecord:
    node: int
    status: DeviceStatus = DeviceStatus.PENDING
    credential_ref: Optional[str] = None
    policy_ref: Optional[str] = None
    registered_at: Optional[int] = None
    head: int = 0
    port: int = 0
    cluster: int = 0
    epoch: int = 0
    bootstrap: bytes = b""
    attrs: dict = field(default_factory=dict)
    access: bool = False
    first_round: Optional[int] = None
    rejoin_allowed: bool = False


@dataclass
class FlowRecord:
    src: int
    dst: int
    msg_type: int
    first_seen: int
    last_seen: int
    packets: int = 0
    bytes: int = 0
    auth_failures: int = 0
    integrity_failures: int = 0
    denials: int = 0
    ingress: set = field(default_factory=set)

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.src, self.dst, self.msg_type)


@dataclass(frozen=True)
class ServiceDecision:
    tick: int
    round: int
    cluster: int
    nodes: tuple[int, ...]
    allow: bool
    offending: tuple[int, ...] = ()


class Sink:
    """Back-end entity: receives aggregates and everything delivered upstream."""

    def __init__(self):
        self.aggregates: list[tuple[int, AggregateResult, tuple[int, ...]]] = []
        self.delivered: Counter = Counter()
        self.delivered_ticks: dict[tuple[int, int, int], list[int]] = {}
        self.controls: list[tuple[int, int, bytes]] = []
        self.grants: list[tuple[int, int, int]] = []
        self.services: list[ServiceDecision] = []
        self.incidents: list[tuple[int, str]] = []

    def receive(self, round_: int, result: AggregateResult, contributors: Sequence[int]) -> None:
        self.aggregates.append((round_, result, tuple(contributors)))

    def deliver(self, key, tick: int) -> None:
        self.delivered[key] += 1
        self.delivered_ticks.setdefault(key, []).append(tick)


def collect_and_aggregate(readings: Sequence[SmcShareSet], m: int, q: int = privacy.SMC_MODULUS,
                          mode: str = "sum") -> AggregateResult:
    """Per-aggregator subtotals over verified share sets, then recombination."""
    subtotals: list[Optional[int]] = [0] * m
    for s in readings:
        if s.m != m or any(v is None for v in s.shares):
            raise AggregationError(f"node {s.owner}: aggregator share missing")
        for j, v in enumerate(s.shares):
            subtotals[j] = (subtotals[j] + v) % q
    return privacy.smc_combine(subtotals, q, mode, len(readings), m=m)


# ---------------------------------------------------------------- config

@dataclass
class ControllerConfig:
    modules: frozenset = frozenset(MODULES)
    curve: Curve = ecc.P192
    reading_period: int = 20
    aggregate: str = "sum"
    aggregators: int = privacy.DEFAULT_AGGREGATORS
    key_lifetime: int = 10_000
    renew_fraction: float = 0.8
    auth_timeout: int = 50
    alpha: float = 0.1
    tau: float = 0.7
    service_period: int = 5
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    templates: tuple = (abac.DEFAULT_SENSOR_TEMPLATE,)

    def on(self, module: str) -> bool:
        return module in self.modules


# ---------------------------------------------------------------- IoT controller

class IoTController:
    """Per-round buffers of verified readings; only aggregates leave."""

    def __init__(self, cfg: ControllerConfig, sink: Sink, audit: AuditLog):
        self.cfg = cfg
        self.sink = sink
        self.audit = audit
        self.pending: dict[int, dict[int, object]] = {}
        self.closed_through = -1

    def is_open(self, round_: int) -> bool:
        return round_ > self.closed_through

    def has(self, node: int, round_: int) -> bool:
        return node in self.pending.get(round_, {})

    def accept(self, node: int, round_: int, item) -> None:
        self.pending.setdefault(round_, {})[node] = item

    def close_round(self, round_: int, tick: int) -> tuple[Optional[AggregateResult], tuple[int, ...]]:
        self.closed_through = max(self.closed_through, round_)
        items = self.pending.pop(round_, {})
        contributors = tuple(sorted(items))
        if not items:
            return None, ()
        try:
            if self.cfg.on("privacy"):
                result = collect_and_aggregate([items[n] for n in contributors], self.cfg.aggregators,
                                               mode=self.cfg.aggregate)
            else:
                total = sum(items[n] for n in contributors)
                value = {"sum": total, "mean": total / len(items), "count": len(items)}[self.cfg.aggregate]
                result = AggregateResult(self.cfg.aggregate, value, total, len(items))
        except AggregationError as exc:
            self.sink.incidents.append((tick, str(exc)))
            self.audit(tick, "iot", "aggregate-abort", round=round_, reason=str(exc))
            return None, contributors
        self.sink.receive(round_, result, contributors)
        self.audit(tick, "iot", "aggregate", round=round_, mode=result.mode, value=result.value,
                   count=result.count)
        return result, contributors


# ---------------------------------------------------------------- security controller

@dataclass
class _JoinPending:
    node: int
    head: int
    port: int
    join: sb.JoinRequest


class SecurityController:
    """SDN security controller; attached to the simulator as node 0."""

    def __init__(self, net, cfg: ControllerConfig, gateway_keys: KeyPair,
                 provisioning: Mapping[int, bytes], rng: random.Random, audit: Optional[AuditLog] = None):
        self.net = net
        self.cfg = cfg
        self.keys = gateway_keys
        self.curve = cfg.curve
        self.provisioning = dict(provisioning)
        self.rng = rng
        self.audit = audit or AuditLog()
        self.sink = Sink()
        self.iot = IoTController(cfg, self.sink, self.audit)
        self.devices: dict[int, DeviceRecord] = {}
        self.flows: dict[tuple[int, int, int], FlowRecord] = {}
        self.observed = 0
        self.quarantined: set[int] = set()
        self.tables: dict[int, sb.FlowTable] = {}
        self.installed: dict[int, set] = {}
        self.head_stats: dict[int, sb.StatsReport] = {}
        self.hellos: set[int] = set()
        self.pending_reads: dict[int, list[int]] = {}
        self.pending_joins: dict[int, _JoinPending] = {}
        self.access_sessions: dict[int, int] = {}
        self.flowmod_rejects = 0
        self.countermeasures: list[tuple[int, Countermeasure]] = []
        self._next_prio: dict[int, int] = {}
        self._policy_seq = 0

        self.km = KeyManager(self.curve, rng, gateway_keys, cfg.key_lifetime, cfg.renew_fraction) \
            if cfg.on("keymgmt") else None
        self.creds = CredentialStore(self.curve, gateway_keys.public, cfg.key_lifetime,
                                     aggregators=cfg.aggregators) if cfg.on("privacy") else None
        self.join_auth = AuthBroker(random.Random(rng.getrandbits(64)), cfg.auth_timeout) \
            if cfg.on("authn") else None
        self.access_auth = AuthBroker(random.Random(rng.getrandbits(64)), cfg.auth_timeout) \
            if cfg.on("authn") else None
        self.policies = abac.PolicyStore() if cfg.on("abac") else None
        self.trust = TrustStore(cfg.alpha, cfg.tau, self._observers, self._is_registered) \
            if cfg.on("trust") else None
        self.mitigation = MitigationAgent(cfg.detector, self.audit) if cfg.on("mitigation") else None

    # -- helpers

    @property
    def tick(self) -> int:
        return self.net.tick

    def record(self, node: int) -> Optional[DeviceRecord]:
        return self.devices.get(node)

    def _is_registered(self, node: int) -> bool:
        rec = self.devices.get(node)
        return rec is not None and rec.status is DeviceStatus.REGISTERED

    def registered(self) -> list[int]:
        return sorted(n for n, r in self.devices.items() if r.status is DeviceStatus.REGISTERED)

    def cluster_members(self, cluster: int) -> list[int]:
        return sorted(n for n, r in self.devices.items()
                      if r.status is DeviceStatus.REGISTERED and r.cluster == cluster)

    def _observers(self, node: int) -> list[int]:
        rec = self.devices.get(node)
        mates = [n for n in self.cluster_members(rec.cluster) if n != node] if rec else []
        return mates or [GATEWAY]

    def _send_head(self, head: int, msg) -> None:
        self.net.send(GATEWAY, head, sb.encode(msg))

    def send_to_device(self, node: int, msg_type: MsgType, payload: bytes, src: int = GATEWAY) -> bool:
        rec = self.devices.get(node)
        if rec is None or not rec.head:
            return False
        frame = sb.encode(sb.Data(Packet(src, node, msg_type, payload)))
        self._send_head(rec.head, sb.PacketOut(rec.port, frame))
        return True

    def _send_to_port(self, head: int, port: int, node: int, msg_type: MsgType, payload: bytes) -> None:
        frame = sb.encode(sb.Data(Packet(GATEWAY, node, msg_type, payload)))
        self._send_head(head, sb.PacketOut(port, frame))

    # -- flow table management

    def install(self, head: int, match: FlowMatch, action: Action, priority: Optional[int] = None) -> bool:
        table = self.tables.setdefault(head, sb.FlowTable())
        if priority is None:
            priority = self._next_prio.get(head, FORWARD_PRIORITY_BASE)
            self._next_prio[head] = priority + 1
        mod = FlowMod(FlowModOp.ADD, priority, match, action)
        try:
            table.apply_flow_mod(mod)
        except FlowModError as exc:
            self.flowmod_rejects += 1
            self.audit(self.tick, "gateway", "flowmod-reject", head=head, match=str(match), reason=str(exc))
            return False
        self._send_head(head, mod)
        self.audit(self.tick, "gateway", "flowmod", head=head, prio=priority, match=str(match),
                   action=str(action))
        return True

    def _maybe_forward_rule(self, head: int, pkt: Packet) -> None:
        if pkt.dst != GATEWAY or pkt.msg_type not in (MsgType.READING, MsgType.SERVICE):
            return
        key = pkt.flow_key
        done = self.installed.setdefault(head, set())
        if key in done:
            return
        done.add(key)
        self.install(head, FlowMatch(*key), Action(ActionKind.FORWARD, sb.UPLINK_PORT))

    # -- accounting

    def account_flow(self, pkt: Packet, size: int, ingress: int) -> FlowRecord:
        key = (pkt.src, pkt.dst, int(pkt.msg_type))
        rec = self.flows.get(key)
        if rec is None:
            rec = self.flows[key] = FlowRecord(*key, first_seen=self.tick, last_seen=self.tick)
        rec.packets += 1
        rec.bytes += size
        rec.last_seen = self.tick
        rec.ingress.add(ingress)
        self.observed += 1
        return rec

    def _finish(self, rec: FlowRecord, pkt: Packet, size: int, verdict: str) -> None:
        integrity = verdict in ("integrity", "replay")
        auth_fail = verdict == "auth-fail"
        if integrity:
            rec.integrity_failures += 1
        if auth_fail:
            rec.auth_failures += 1
        if verdict == "denied":
            rec.denials += 1
        if verdict == "ok" and pkt.dst == GATEWAY:
            self.sink.deliver(rec.key, self.tick)
        if self.mitigation is not None:
            self.mitigation.ingest(FlowEvent(self.tick, pkt.src, pkt.dst, int(pkt.msg_type), size, verdict,
                                             auth_failure=auth_fail, integrity_failure=integrity,
                                             spoofed=verdict == "spoofed"))

    # -- frame entry point

    def on_frame(self, net, frame: bytes, sender: int) -> None:
        try:
            msg = sb.decode(frame)
        except EncodingError:
            self.audit(self.tick, "gateway", "malformed", head=sender, bytes=len(frame))
            return
        if isinstance(msg, sb.Hello):
            self.hellos.add(msg.node)
            self.audit(self.tick, "gateway", "hello", head=msg.node)
        elif isinstance(msg, sb.StatsReport):
            self.head_stats[sender] = msg
        elif isinstance(msg, sb.Data):
            self.handle_packet(msg.packet, len(frame), sender, None)
        elif isinstance(msg, sb.PacketIn):
            try:
                inner = sb.decode(msg.frame)
            except EncodingError:
                self.audit(self.tick, "gateway", "malformed", head=sender, bytes=len(msg.frame))
                return
            if isinstance(inner, sb.Data):
                self.handle_packet(inner.packet, len(msg.frame), sender, msg.in_port)
            elif isinstance(inner, sb.JoinRequest):
                self.handle_join(inner, len(msg.frame), sender, msg.in_port)

    # -- join and registration

    def handle_join(self, join: sb.JoinRequest, size: int, head: int, port: int) -> None:
        pkt = Packet(join.node, GATEWAY, MsgType.JOIN)
        rec = self.account_flow(pkt, size, head)
        verdict = self._join_verdict(join, head, port)
        self._finish(rec, pkt, size, verdict)

    def _reject(self, node: int, head: int, port: int, reason: appmsg.RejectReason) -> None:
        self.audit(self.tick, "gateway", "join-reject", node=node, head=head, port=port,
                   reason=reason.name.lower())
        self._send_to_port(head, port, node, MsgType.CONTROL, appmsg.Reject(reason).encode())

    def _join_verdict(self, join: sb.JoinRequest, head: int, port: int) -> str:
        node = join.node
        if node in self.quarantined:
            self._reject(node, head, port, appmsg.RejectReason.QUARANTINED)
            return "quarantined"
        rec = self.devices.get(node)
        if rec is not None and rec.status is DeviceStatus.REGISTERED:
            self._reject(node, head, port, appmsg.RejectReason.DUPLICATE)
            return "duplicate"
        if rec is not None and rec.status is DeviceStatus.REVOKED and not rec.rejoin_allowed:
            self._reject(node, head, port, appmsg.RejectReason.REVOKED)
            return "key-revoked"
        try:
            point = join.point
        except (EccError, ValueError):
            return "integrity"
        if point.is_infinity or not self.curve.contains(point):
            return "integrity"
        if self.join_auth is None:
            self.register_device(join, head, port)
            return "ok"
        if self.provisioning.get(node) != join.pubkey:
            self._reject(node, head, port, appmsg.RejectReason.UNPROVISIONED)
            return "unprovisioned"
        enrol = ecc.derive_shared(self.curve, self.keys.secret, join.point).key
        self.join_auth.register_principal(node, enrol, self.tick)
        session = self.join_auth.begin(GATEWAY, node, self.tick)
        self.pending_joins[session.session_id] = _JoinPending(node, head, port, join)
        frame = AuthFrame(session.session_id, session.nonce_i).encode()
        self._send_to_port(head, port, node, MsgType.AUTH, frame)
        self.audit(self.tick, "authn", "join-challenge", node=node, session=f"{session.session_id:016x}")
        return "challenge"

    def _join_response(self, pkt: Packet, af: AuthFrame) -> str:
        pend = self.pending_joins.get(af.session)
        if pend is None or pend.node != pkt.src:
            return "auth-fail"
        state = self.join_auth.verify(af.session, af.proof, Role.RESPONDER, self.tick)
        if state is not SessionState.HALF:
            del self.pending_joins[af.session]
            sess = self.join_auth.sessions[af.session]
            self.audit(self.tick, "authn", "auth-fail", principal=pend.node, phase="join", reason=sess.reason)
            self._reject(pend.node, pend.head, pend.port, appmsg.RejectReason.AUTH_FAILED)
            return "auth-fail"
        del self.pending_joins[af.session]
        self.join_auth.attach_counter_nonce(self.join_auth.sessions[af.session], af.nonce)
        self.register_device(pend.join, pend.head, pend.port)
        return "ok"

    def allow_rejoin(self, node: int) -> None:
        rec = self.devices.get(node)
        if rec is not None:
            rec.rejoin_allowed = True
        if self.km is not None:
            self.km.allow_rejoin(node)

    def register_device(self, join: sb.JoinRequest, head: int = 0, port: int = 0,
                        tick: Optional[int] = None) -> DeviceRecord:
        """Keys, credentials and policy for one joining node, synchronously."""
        tick = self.tick if tick is None else tick
        node = join.node
        prev = self.devices.get(node)
        if prev is not None and prev.status is DeviceStatus.REGISTERED:
            raise RegistrationError(f"node {node} already registered")
        if prev is not None and prev.status is DeviceStatus.REVOKED and not prev.rejoin_allowed:
            raise RegistrationError(f"node {node} revoked; re-registration not allowed")
        head = head or (self.net.nodes[node].head if node in self.net.nodes else 0) or 0
        port = port or node
        cluster = head - 1 if head else 0
        rec = DeviceRecord(node, DeviceStatus.PENDING, head=head, port=port, cluster=cluster,
                           bootstrap=join.pubkey)
        rec.attrs = {"role": "sensor", "cluster": cluster, "node": node, "epoch": 0, "trust_band": "unknown"}
        key_msg = None
        if self.km is not None:
            entry, kp = self.km.generate_keypair_for(node, tick)
            rec.epoch = entry.epoch
            rec.attrs["epoch"] = entry.epoch
            if self.creds is not None:
                self.creds.retire(node)
                cred = self.creds.issue_credentials(node, tick, keypair=kp, epoch=entry.epoch)
                rec.credential_ref = f"cred:{node}:{cred.epoch}"
            if self.access_auth is not None:
                self.access_auth.register_principal(node, self.km.gateway_key(node), tick)
            key_msg = appmsg.KeyDelivery(entry.epoch, tick, entry.expires_at, self.km.wrap_for(kp, join.point))
            self.net.schedule(self.km.renewal_due(node), GATEWAY, f"renew:{node}",
                              lambda n=node, e=entry.epoch: self._renew(n, e))
        if self.policies is not None:
            template = self._template_for(rec.attrs["role"])
            policy = abac.derive_policy(rec.attrs, template, node, tick)
            self.policies.put(policy)
            self._policy_seq += 1
            rec.policy_ref = f"pol:{node}:{self._policy_seq}"
        rec.status = DeviceStatus.REGISTERED
        rec.registered_at = tick
        self.devices[node] = rec
        if node in self.net.nodes:
            self.net.nodes[node].status = "registered"
        self.audit(tick, "gateway", "register", node=node, head=head, epoch=rec.epoch,
                   credential=rec.credential_ref or "-", policy=rec.policy_ref or "-")
        if key_msg is not None:
            self._send_to_port(head, port, node, MsgType.CONTROL, key_msg.encode())
        if self.access_auth is None:
            self.grant_access(node, 0)
        return rec

    def _template_for(self, role: str) -> abac.PolicyTemplate:
        for t in self.cfg.templates:
            if t.role is None or t.role == role:
                return t
        raise ConfigError(f"no policy template for role {role!r}")

    def grant_access(self, node: int, session: int) -> None:
        rec = self.devices[node]
        rec.access = True
        if rec.first_round is None:
            rec.first_round = self.tick // self.cfg.reading_period + 2
        self.sink.grants.append((self.tick, node, session))
        self.audit(self.tick, "gateway", "grant", node=node, first_round=rec.first_round,
                   session=f"{session:016x}")
        self._send_to_port(rec.head, rec.port, node, MsgType.CONTROL,
                           appmsg.AccessGrant(rec.first_round, session).encode())

    def _renew(self, node: int, epoch: int) -> None:
        rec = self.devices.get(node)
        if rec is None or rec.status is not DeviceStatus.REGISTERED or rec.epoch != epoch:
            return
        entry, kp = self.km.generate_keypair_for(node, self.tick)
        rec.epoch = rec.attrs["epoch"] = entry.epoch
        if self.creds is not None:
            self.creds.retire(node)
            cred = self.creds.issue_credentials(node, self.tick, keypair=kp, epoch=entry.epoch)
            rec.credential_ref = f"cred:{node}:{cred.epoch}"
        if self.access_auth is not None:
            self.access_auth.register_principal(node, self.km.gateway_key(node), self.tick)
        if self.policies is not None:
            self.policies.put(abac.derive_policy(rec.attrs, self._template_for(rec.attrs["role"]), node, self.tick))
        msg = appmsg.KeyDelivery(entry.epoch, self.tick, entry.expires_at,
                                 self.km.wrap_for(kp, sb.JoinRequest(node, rec.bootstrap).point))
        self.audit(self.tick, "keymgmt", "renew", node=node, epoch=entry.epoch)
        self.send_to_device(node, MsgType.CONTROL, msg.encode())
        self.net.schedule(self.km.renewal_due(node), GATEWAY, f"renew:{node}",
                          lambda n=node, e=entry.epoch: self._renew(n, e))

    # -- data path

    def handle_packet(self, pkt: Packet, size: int, head: int, in_port: Optional[int]) -> None:
        rec = self.account_flow(pkt, size, head)
        verdict = self._check(pkt, head)
        self._finish(rec, pkt, size, verdict)
        if verdict == "ok" and in_port is not None:
            self._maybe_forward_rule(head, pkt)

    def _check(self, pkt: Packet, head: int) -> str:
        src = pkt.src
        if pkt.msg_type is MsgType.AUTH and self.join_auth is not None:
            try:
                af = AuthFrame.decode(pkt.payload)
            except AuthError:
                return "integrity"
            if af.session in self.pending_joins:
                return self._join_response(pkt, af)
        if src in self.quarantined:
            return "quarantined"
        rec = self.devices.get(src)
        if rec is None or rec.status is DeviceStatus.PENDING:
            return "unregistered"
        if rec.status is DeviceStatus.REVOKED:
            return "key-revoked"
        if self.policies is not None:
            decision = abac.authorize_flow(self.policies, pkt.flow_key, rec.attrs)
            if not decision:
                return "denied"
        t = pkt.msg_type
        if t is MsgType.READING:
            return self._reading(pkt, rec) if pkt.dst == GATEWAY else "unroutable"
        if t is MsgType.AUTH:
            return self._auth(pkt, rec)
        if t is MsgType.SERVICE:
            return self._service(pkt, rec)
        if t is MsgType.CONTROL:
            return self._control(pkt)
        return "unroutable"

    def _reading(self, pkt: Packet, rec: DeviceRecord) -> str:
        if not rec.access:
            return "no-access"
        if self.creds is not None:
            try:
                cp = privacy.CipherPacket.decode(pkt.payload, self.curve)
            except IntegrityError:
                return "integrity"
            if cp.node != pkt.src:
                return "integrity"
            cred = self.creds.get(pkt.src)
            if cred is None:
                return "key-revoked"
            if not privacy.verify_packet(cp, self.curve, cred.public):
                if any(privacy.verify_packet(cp, self.curve, p) for p in self.km.previous_publics(pkt.src)):
                    return "stale-epoch"
                return "spoofed"
            try:
                body = privacy.open_reading(cp, self.keys, cred.public, cred.smc_modulus)
            except IntegrityError:
                return "integrity"
            seq, item = body.seq, SmcShareSet(pkt.src, body.shares, body.modulus)
            if body.value > privacy.MAX_READING:
                return "integrity"
        else:
            try:
                seq, value = privacy.parse_plain_reading(pkt.payload)
            except IntegrityError:
                return "integrity"
            if value > privacy.MAX_READING:
                return "integrity"
            item = value
        current = self.tick // self.cfg.reading_period
        if (seq > current or not self.iot.is_open(seq) or self.iot.has(pkt.src, seq)
                or seq < (rec.first_round or 0)):
            return "replay"
        self.iot.accept(pkt.src, seq, item)
        return "ok"

    def _auth(self, pkt: Packet, rec: DeviceRecord) -> str:
        try:
            af = AuthFrame.decode(pkt.payload)
        except AuthError:
            return "integrity"
        if self.access_auth is None:
            # no authentication module: any access request is granted as asked
            if af.is_challenge:
                self.grant_access(pkt.src, af.session)
            return "ok"
        broker = self.access_auth
        if af.is_challenge:
            try:
                session = broker.begin(pkt.src, GATEWAY, self.tick, nonce=af.nonce, session_id=af.session)
            except (AuthError, KeyRevokedError) as exc:
                self.audit(self.tick, "authn", "auth-fail", principal=pkt.src, phase="access", reason=str(exc))
                return "auth-fail"
            if session.state is SessionState.FAILED:
                self.audit(self.tick, "authn", "auth-fail", principal=pkt.src, phase="access",
                           reason=session.reason)
                return "auth-fail"
            proof, nonce_r = broker.respond(session, self.km.gateway_key(pkt.src), self.tick)
            broker.verify(session.session_id, proof, Role.RESPONDER, self.tick)
            self.access_sessions[session.session_id] = pkt.src
            self.send_to_device(pkt.src, MsgType.AUTH, AuthFrame(session.session_id, nonce_r, proof).encode())
            return "ok"
        owner = self.access_sessions.get(af.session)
        if owner != pkt.src:
            broker.failures[pkt.src] += 1
            self.audit(self.tick, "authn", "auth-fail", principal=pkt.src, phase="access", reason="unknown-session")
            return "auth-fail"
        state = broker.verify(af.session, af.proof, Role.INITIATOR, self.tick)
        if state is SessionState.MUTUAL:
            del self.access_sessions[af.session]
            self.audit(self.tick, "authn", "mutual", principal=pkt.src, session=f"{af.session:016x}")
            self.grant_access(pkt.src, af.session)
            return "ok"
        self.audit(self.tick, "authn", "auth-fail", principal=pkt.src, phase="access",
                   reason=broker.sessions[af.session].reason)
        return "auth-fail"

    def _service(self, pkt: Packet, rec: DeviceRecord) -> str:
        try:
            msg = appmsg.decode_service(pkt.payload)
        except EncodingError:
            return "integrity"
        if pkt.dst != GATEWAY:
            if not isinstance(msg, appmsg.StorageRead) or not self._is_registered(pkt.dst):
                return "unroutable"
            self.pending_reads.setdefault(pkt.dst, []).append(pkt.src)
            self.send_to_device(pkt.dst, MsgType.SERVICE, pkt.payload, src=pkt.src)
            return "ok"
        if isinstance(msg, appmsg.StorageData):
            waiting = self.pending_reads.get(pkt.src, [])
            if msg.requester not in waiting:
                return "unsolicited"
            waiting.remove(msg.requester)
            self.send_to_device(msg.requester, MsgType.SERVICE, pkt.payload, src=pkt.src)
            return "ok"
        if isinstance(msg, appmsg.ServiceRequest):
            return "ok"
        return "unroutable"

    def _control(self, pkt: Packet) -> str:
        if pkt.dst == GATEWAY:
            self.sink.controls.append((self.tick, pkt.src, pkt.payload))
            self.audit(self.tick, "gateway", "control-accepted", src=pkt.src, bytes=len(pkt.payload))
            return "ok"
        if not self._is_registered(pkt.dst):
            return "unroutable"
        self.send_to_device(pkt.dst, MsgType.CONTROL, pkt.payload, src=pkt.src)
        return "ok"

    # -- rounds, trust and service assessment

    def expected(self, round_: int) -> list[int]:
        return [n for n in self.registered()
                if self.devices[n].access and self.devices[n].first_round is not None
                and self.devices[n].first_round <= round_]

    def close_round(self, round_: int) -> None:
        expected = self.expected(round_)
        result, contributors = self.iot.close_round(round_, self.tick)
        if self.trust is not None:
            got = set(contributors)
            for b in expected:
                observers = self._observers(b)
                a = observers[round_ % len(observers)]
                self.trust.record(a, b, int(b in got), self.tick)
        if self.cfg.service_period > 0 and (round_ + 1) % self.cfg.service_period == 0:
            self._service_request(round_)

    def _service_request(self, round_: int) -> None:
        clusters = sorted({r.cluster for r in self.devices.values()})
        if not clusters:
            return
        cluster = clusters[(round_ // self.cfg.service_period) % len(clusters)]
        nodes = tuple(self.cluster_members(cluster))
        if not nodes:
            return
        if self.trust is None:
            decision = ServiceDecision(self.tick, round_, cluster, nodes, True)
        else:
            a = self.trust.assess_request("collector", nodes)
            for n, v in a.trust.items():
                band = "high" if v >= self.cfg.tau else "low"
                self.devices[n].attrs["trust_band"] = band
            decision = ServiceDecision(self.tick, round_, cluster, nodes, a.allow, tuple(a.offending))
            self.audit(self.tick, "trust", "assess", cluster=cluster, allow=int(a.allow),
                       offending=list(a.offending))
        self.sink.services.append(decision)

    # -- analyzer and countermeasures

    def analyzer_tick(self, end: int) -> list:
        if self.mitigation is None:
            return []
        alerts = self.mitigation.close_window(end)
        cms = self.mitigation.countermeasures(alerts, end)
        for cm in cms:
            self.dispatch(cm)
        return alerts

    def _ingress_of(self, node: int) -> list[int]:
        heads = set()
        for rec in self.flows.values():
            if rec.src == node:
                heads |= rec.ingress
        return sorted(heads)

    def dispatch(self, cm: Countermeasure) -> None:
        self.countermeasures.append((self.tick, cm))
        if cm.action is CmAction.DROP:
            if cm.target[0] == "src":
                heads = set(self._ingress_of(cm.target[1]))
            else:
                flow = self.flows.get(cm.target)
                heads = set(flow.ingress) if flow else set()
            for head in sorted(heads):
                self.install(head, cm.flow_mod.match, cm.flow_mod.action, cm.flow_mod.priority)
        elif cm.action is CmAction.REVOKE:
            self.revoke(cm.nodes, reason=cm.cause.kind.value)
        elif cm.action is CmAction.QUARANTINE:
            for node in cm.nodes:
                self.quarantined.add(node)
                for head in self._ingress_of(node):
                    self.install(head, cm.flow_mod.match, cm.flow_mod.action, cm.flow_mod.priority)
            self.audit(self.tick, "gateway", "quarantine", nodes=list(cm.nodes))

    def revoke(self, nodes: Sequence[int], reason: str = "") -> Optional[object]:
        nodes = [n for n in nodes if n in self.devices]
        if not nodes:
            return None
        receipt = None
        if self.km is not None:
            receipt = self.km.revoke(nodes, reason, self.tick)
        for n in nodes:
            rec = self.devices[n]
            rec.status = DeviceStatus.REVOKED
            rec.access = False
            rec.rejoin_allowed = False
            if self.creds is not None:
                self.creds.retire(n)
            for broker in (self.access_auth, self.join_auth):
                if broker is not None:
                    broker.revoke(n)
            if self.policies is not None:
                self.policies.remove(n)
            if n in self.net.nodes:
                self.net.nodes[n].status = "revoked"
        msg = sb.Revoke(tuple(nodes))
        for head in sorted(self.net.heads):
            self._send_head(head, msg)
        self.audit(self.tick, "keymgmt" if self.km else "gateway", "revoke", nodes=list(nodes), reason=reason)
        return receipt
