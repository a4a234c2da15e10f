"""Node-side behaviour: cluster-head switches and sensor devices."""
from __future__ import annotations

import logging
import random
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Optional

from . import appmsg, ecc, keymgmt, privacy, southbound as sb
from .authn import AuthFrame, make_proof
from .ecc import Curve, CurvePoint, KeyPair
from .errors import EccError, EncodingError, FlowModError
from .southbound import ActionKind, MsgType, Packet

log = logging.getLogger(__name__)

GATEWAY = 0


class SensorSwitch:
    """Cluster head: flow-table forwarding, table-miss to the controller."""

    def __init__(self, node: int, stats_period: int = 100, capacity: int = sb.DEFAULT_CAPACITY):
        self.node = node
        self.table = sb.FlowTable(capacity)
        self.stats_period = stats_period
        self.dropped = 0
        self.malformed = 0
        self.rejected_mods = 0
        self.revokes_forwarded = 0

    def start(self, net, at: int = 0) -> None:
        net.schedule(at, self.node, "hello", lambda: net.send(self.node, GATEWAY, sb.encode(sb.Hello(self.node))))
        if self.stats_period > 0:
            net.schedule(at + self.stats_period, self.node, "stats", lambda: self._stats(net))

    def _stats(self, net) -> None:
        net.send(self.node, GATEWAY, sb.encode(self.table.stats()))
        net.schedule(net.tick + self.stats_period, self.node, "stats", lambda: self._stats(net))

    def on_frame(self, net, frame: bytes, sender: int) -> None:
        if sender == GATEWAY:
            self._from_controller(net, frame)
            return
        try:
            kind = sb.peek_kind(frame)
        except EncodingError:
            self.malformed += 1
            return
        if kind is not sb.Kind.DATA:
            net.send(self.node, GATEWAY, sb.encode(sb.PacketIn(sender, frame)))
            return
        try:
            pkt = sb.decode(frame).packet
        except EncodingError:
            self.malformed += 1
            return
        action = self.table.match_packet(pkt, len(frame))
        if action.kind is ActionKind.FORWARD:
            if action.port == sb.UPLINK_PORT:
                net.send(self.node, GATEWAY, frame)
            elif net.has_link(self.node, action.port):
                net.send(self.node, action.port, frame)
        elif action.kind is ActionKind.TO_CONTROLLER:
            net.send(self.node, GATEWAY, sb.encode(sb.PacketIn(sender, frame)))
        else:
            self.dropped += 1

    def _from_controller(self, net, frame: bytes) -> None:
        try:
            msg = sb.decode(frame)
        except EncodingError:
            self.malformed += 1
            return
        if isinstance(msg, sb.FlowMod):
            try:
                self.table.apply_flow_mod(msg)
            except FlowModError as exc:
                self.rejected_mods += 1
                log.debug("head %d rejected flow mod: %s", self.node, exc)
        elif isinstance(msg, sb.PacketOut):
            if net.has_link(self.node, msg.out_port):
                net.send(self.node, msg.out_port, msg.frame)
        elif isinstance(msg, sb.Revoke):
            for n in msg.nodes:
                if net.has_link(self.node, n):
                    self.revokes_forwarded += 1
                    net.send(self.node, n, frame)


@dataclass
class DeviceConfig:
    curve: Curve
    gateway_pub: CurvePoint
    reading_period: int = 20
    privacy: bool = True
    keyed: bool = True
    authn: bool = True
    cooperation: float = 1.0
    storage_depth: int = 8
    max_value: int = 1000


class DeviceAgent:
    """Sensor: join, receive keys, authenticate, then report one reading per round."""

    def __init__(self, node: int, head: int, cfg: DeviceConfig, bootstrap: KeyPair, rng: random.Random):
        self.node = node
        self.head = head
        self.cfg = cfg
        self.bootstrap = bootstrap
        self.rng = rng
        self.offset = rng.randrange(0, max(1, cfg.reading_period - 3))
        self.keypair: Optional[KeyPair] = None
        self.credential: Optional[privacy.Credential] = None
        self.gw_key: Optional[bytes] = None
        self.epoch = 0
        self.state = "idle"
        self.first_round: Optional[int] = None
        self.access_session: Optional[int] = None
        self.access_nonce: Optional[bytes] = None
        self.truth: dict[int, int] = {}
        self.sent: set[int] = set()
        self.withheld: set[int] = set()
        self.storage: deque[int] = deque(maxlen=cfg.storage_depth)
        self.config_log: list[tuple[int, int, bytes]] = []
        self.received: Counter = Counter()
        self.revoked = False
        self._scheduled = False

    # -- lifecycle

    def start(self, net, at: int) -> None:
        net.schedule(at, self.node, "join", lambda: self.join(net))

    def join(self, net) -> None:
        self.state = "joining"
        pub = ecc.encode_point(self.cfg.curve, self.bootstrap.public)
        net.send(self.node, self.head, sb.encode(sb.JoinRequest(self.node, pub)))

    def _send(self, net, msg_type: MsgType, payload: bytes, dst: int = GATEWAY) -> None:
        net.send(self.node, self.head, sb.encode(sb.Data(Packet(self.node, dst, msg_type, payload))))

    def on_frame(self, net, frame: bytes, sender: int) -> None:
        if self.revoked:
            return
        try:
            msg = sb.decode(frame)
        except EncodingError:
            return
        if isinstance(msg, sb.Revoke):
            if self.node in msg.nodes:
                self.revoked = True
                self.state = "revoked"
            return
        if not isinstance(msg, sb.Data) or msg.packet.dst != self.node:
            return
        pkt = msg.packet
        self.received[pkt.msg_type] += 1
        try:
            if pkt.msg_type is MsgType.CONTROL:
                self._control(net, pkt)
            elif pkt.msg_type is MsgType.AUTH:
                self._auth(net, pkt)
            elif pkt.msg_type is MsgType.SERVICE:
                self._service(net, pkt)
        except (EncodingError, EccError, ValueError) as exc:
            log.debug("device %d ignored frame: %s", self.node, exc)

    def _control(self, net, pkt: Packet) -> None:
        msg = appmsg.decode_control(pkt.payload)
        if isinstance(msg, appmsg.KeyDelivery):
            if pkt.src != GATEWAY:
                return
            kp = keymgmt.unwrap_secret(self.cfg.curve, self.bootstrap, self.cfg.gateway_pub, msg.wrapped)
            self.keypair = kp
            self.epoch = msg.epoch
            self.gw_key = ecc.derive_shared(self.cfg.curve, kp.secret, self.cfg.gateway_pub).key
            if self.cfg.privacy:
                self.credential = privacy.Credential(self.node, kp, self.cfg.gateway_pub, privacy.SMC_MODULUS,
                                                     msg.valid_from, msg.valid_to, msg.epoch)
            if self.state in ("joining", "keyed") and self.cfg.authn and self.first_round is None:
                self.state = "keyed"
                self._begin_access(net)
        elif isinstance(msg, appmsg.AccessGrant):
            if pkt.src != GATEWAY:
                return
            if self.cfg.authn and msg.session != self.access_session:
                return
            if self.first_round is None:
                self.first_round = msg.first_round
                self.state = "active"
                self._schedule_round(net, msg.first_round)
        elif isinstance(msg, appmsg.Reject):
            if self.state == "joining":
                self.state = f"rejected:{msg.reason.name.lower()}"
        elif isinstance(msg, appmsg.ConfigCommand):
            self.config_log.append((net.tick, pkt.src, msg.command))

    def _begin_access(self, net) -> None:
        self.access_session = self.rng.getrandbits(64)
        self.access_nonce = self.rng.getrandbits(128).to_bytes(16, "big")
        self._send(net, MsgType.AUTH, AuthFrame(self.access_session, self.access_nonce).encode())

    def _auth(self, net, pkt: Packet) -> None:
        af = AuthFrame.decode(pkt.payload)
        if self.state == "joining" and af.is_challenge:
            # prove possession of the enrolment secret
            enrol = ecc.derive_shared(self.cfg.curve, self.bootstrap.secret, self.cfg.gateway_pub).key
            nonce_r = self.rng.getrandbits(128).to_bytes(16, "big")
            proof = make_proof(enrol, af.nonce, self.node)
            self._send(net, MsgType.AUTH, AuthFrame(af.session, nonce_r, proof).encode())
            return
        if af.session != self.access_session or self.gw_key is None or af.is_challenge:
            return
        if af.proof != make_proof(self.gw_key, self.access_nonce, GATEWAY):
            self.state = "auth-failed"
            return
        self._send(net, MsgType.AUTH, AuthFrame(af.session, af.nonce, make_proof(self.gw_key, af.nonce, self.node)).encode())

    def _service(self, net, pkt: Packet) -> None:
        msg = appmsg.decode_service(pkt.payload)
        if isinstance(msg, appmsg.StorageRead):
            data = appmsg.StorageData(pkt.src, tuple(self.storage))
            self._send(net, MsgType.SERVICE, data.encode())

    # -- readings

    def _schedule_round(self, net, r: int) -> None:
        at = r * self.cfg.reading_period + self.offset
        net.schedule(at, self.node, f"reading:{r}", lambda: self._reading(net, r))

    def _reading(self, net, r: int) -> None:
        if self.revoked:
            return
        value = self.rng.randrange(self.cfg.max_value)
        self.truth[r] = value
        self.storage.append(value)
        if self.rng.random() >= self.cfg.cooperation:
            self.withheld.add(r)
        else:
            if self.cfg.privacy:
                if self.credential is not None:
                    cp = privacy.protect_reading(self.credential, value, seq=r, tick=net.tick, rng=self.rng)
                    self._send(net, MsgType.READING, cp.encode(self.cfg.curve))
                    self.sent.add(r)
            else:
                self._send(net, MsgType.READING, privacy.plain_reading(r, value))
                self.sent.add(r)
        self._schedule_round(net, r + 1)
