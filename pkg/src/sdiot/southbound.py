"""Lightweight OpenFlow-like wire protocol and switch flow tables.

Every frame on every link starts with a 4-byte header::

    kind u8 | length u16 (payload bytes, big-endian) | version u8 (=0x01)

Control kinds follow the OpenFlow vocabulary (Hello, PacketIn, FlowMod...).
Data-plane traffic uses the extra kind ``DATA`` carrying a :class:`Packet`.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional, Union

from .ecc import CurvePoint, decode_point
from .errors import EccError, EncodingError, FlowModError

VERSION = 0x01
HEADER = struct.Struct(">BHB")
MAX_BODY = 0xFFFF
WILDCARD_NODE = 0xFFFFFFFF
WILDCARD_TYPE = 0xFF
GATEWAY = 0
UPLINK_PORT = 0
DEFAULT_CAPACITY = 64


class Kind(enum.IntEnum):
    HELLO = 0x01
    JOIN_REQUEST = 0x02
    PACKET_IN = 0x03
    PACKET_OUT = 0x04
    FLOW_MOD = 0x05
    STATS_REPORT = 0x06
    REVOKE = 0x07
    DATA = 0x10


class MsgType(enum.IntEnum):
    READING = 0
    JOIN = 1
    AUTH = 2
    SERVICE = 3
    CONTROL = 4


class ActionKind(enum.IntEnum):
    FORWARD = 0
    DROP = 1
    TO_CONTROLLER = 2


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    port: int = 0

    def __str__(self) -> str:
        if self.kind == ActionKind.FORWARD:
            return f"forward({self.port})"
        return self.kind.name.lower()


TO_CONTROLLER = Action(ActionKind.TO_CONTROLLER)
DROP = Action(ActionKind.DROP)


@dataclass(frozen=True)
class FlowMatch:
    """``None`` in any field is a wildcard."""

    src: Optional[int] = None
    dst: Optional[int] = None
    msg_type: Optional[MsgType] = None

    def matches(self, src: int, dst: int, msg_type: int) -> bool:
        return ((self.src is None or self.src == src)
                and (self.dst is None or self.dst == dst)
                and (self.msg_type is None or self.msg_type == msg_type))

    @property
    def is_all_wildcard(self) -> bool:
        return self.src is None and self.dst is None and self.msg_type is None

    def __str__(self) -> str:
        def f(v):
            return "*" if v is None else (v.name.lower() if isinstance(v, MsgType) else str(v))
        return f"{f(self.src)}>{f(self.dst)}:{f(self.msg_type)}"


@dataclass(frozen=True)
class Packet:
    """Data-plane frame body: who, to whom, what kind, opaque payload."""

    src: int
    dst: int
    msg_type: MsgType
    payload: bytes = b""

    @property
    def flow_key(self) -> tuple[int, int, MsgType]:
        return (self.src, self.dst, self.msg_type)


# ---------------------------------------------------------------- messages

@dataclass(frozen=True)
class Hello:
    node: int


@dataclass(frozen=True)
class JoinRequest:
    """``pubkey`` is the point encoding (0x00, or 0x04 | x | y)."""

    node: int
    pubkey: bytes

    @property
    def point(self) -> CurvePoint:
        return decode_point(self.pubkey)


@dataclass(frozen=True)
class PacketIn:
    in_port: int
    frame: bytes


@dataclass(frozen=True)
class PacketOut:
    out_port: int
    frame: bytes


class FlowModOp(enum.IntEnum):
    ADD = 0
    DELETE = 1


@dataclass(frozen=True)
class FlowMod:
    op: FlowModOp
    priority: int
    match: FlowMatch
    action: Action = TO_CONTROLLER


@dataclass(frozen=True)
class StatEntry:
    match: FlowMatch
    packets: int
    bytes: int


@dataclass(frozen=True)
class StatsReport:
    entries: tuple[StatEntry, ...] = ()


@dataclass(frozen=True)
class Revoke:
    nodes: tuple[int, ...] = ()


@dataclass(frozen=True)
class Data:
    packet: Packet


SouthboundMessage = Union[Hello, JoinRequest, PacketIn, PacketOut, FlowMod,
                          StatsReport, Revoke, Data]


def _u32(v: int, what: str) -> bytes:
    if not 0 <= v <= 0xFFFFFFFF:
        raise EncodingError(f"{what}={v} does not fit u32")
    return v.to_bytes(4, "big")


def _u16(v: int, what: str) -> bytes:
    if not 0 <= v <= 0xFFFF:
        raise EncodingError(f"{what}={v} does not fit u16")
    return v.to_bytes(2, "big")


def _encode_match(m: FlowMatch) -> bytes:
    return (_u32(WILDCARD_NODE if m.src is None else m.src, "match.src")
            + _u32(WILDCARD_NODE if m.dst is None else m.dst, "match.dst")
            + bytes([WILDCARD_TYPE if m.msg_type is None else int(m.msg_type)]))


def _decode_match(b: bytes) -> FlowMatch:
    src, dst, t = struct.unpack(">IIB", b)
    return FlowMatch(None if src == WILDCARD_NODE else src,
                     None if dst == WILDCARD_NODE else dst,
                     None if t == WILDCARD_TYPE else _msg_type(t))


def _msg_type(t: int) -> MsgType:
    try:
        return MsgType(t)
    except ValueError:
        raise EncodingError(f"unknown msg_type {t}") from None


def encode_packet(pkt: Packet) -> bytes:
    return (_u32(pkt.src, "src") + _u32(pkt.dst, "dst")
            + bytes([int(pkt.msg_type)]) + pkt.payload)


def decode_packet(body: bytes) -> Packet:
    if len(body) < 9:
        raise EncodingError("data frame shorter than packet header")
    src, dst, t = struct.unpack(">IIB", body[:9])
    return Packet(src, dst, _msg_type(t), bytes(body[9:]))


def _body(msg: SouthboundMessage) -> tuple[Kind, bytes]:
    if isinstance(msg, Hello):
        return Kind.HELLO, _u32(msg.node, "node")
    if isinstance(msg, JoinRequest):
        return Kind.JOIN_REQUEST, _u32(msg.node, "node") + msg.pubkey
    if isinstance(msg, PacketIn):
        return Kind.PACKET_IN, _u16(msg.in_port, "in_port") + msg.frame
    if isinstance(msg, PacketOut):
        return Kind.PACKET_OUT, _u16(msg.out_port, "out_port") + msg.frame
    if isinstance(msg, FlowMod):
        return Kind.FLOW_MOD, (bytes([int(msg.op)]) + _u16(msg.priority, "priority")
                               + _encode_match(msg.match) + bytes([int(msg.action.kind)])
                               + _u16(msg.action.port, "port"))
    if isinstance(msg, StatsReport):
        parts = [_u16(len(msg.entries), "entry_count")]
        for e in msg.entries:
            parts.append(_encode_match(e.match) + struct.pack(">QQ", e.packets, e.bytes))
        return Kind.STATS_REPORT, b"".join(parts)
    if isinstance(msg, Revoke):
        return Kind.REVOKE, _u16(len(msg.nodes), "count") + b"".join(
            _u32(n, "node") for n in msg.nodes)
    if isinstance(msg, Data):
        return Kind.DATA, encode_packet(msg.packet)
    raise EncodingError(f"cannot encode {type(msg).__name__}")


def encode(msg: SouthboundMessage) -> bytes:
    kind, body = _body(msg)
    if len(body) > MAX_BODY:
        raise EncodingError(f"{kind.name} body of {len(body)} bytes exceeds {MAX_BODY}")
    return HEADER.pack(int(kind), len(body), VERSION) + body


def peek_kind(frame: bytes) -> Kind:
    if len(frame) < HEADER.size:
        raise EncodingError("frame shorter than header")
    try:
        return Kind(frame[0])
    except ValueError:
        raise EncodingError(f"unknown frame kind {frame[0]:#x}") from None


def decode(frame: bytes) -> SouthboundMessage:
    kind = peek_kind(frame)
    _, length, version = HEADER.unpack_from(frame)
    if version != VERSION:
        raise EncodingError(f"unsupported version {version}")
    body = bytes(frame[HEADER.size:])
    if len(body) != length:
        raise EncodingError(f"length field {length} != body length {len(body)}")
    try:
        return _decode_body(kind, body)
    except struct.error as exc:
        raise EncodingError(f"truncated {kind.name} body") from exc


def _decode_body(kind: Kind, body: bytes) -> SouthboundMessage:
    if kind == Kind.HELLO:
        if len(body) != 4:
            raise EncodingError("Hello body must be 4 bytes")
        return Hello(int.from_bytes(body, "big"))
    if kind == Kind.JOIN_REQUEST:
        if len(body) < 5:
            raise EncodingError("JoinRequest too short")
        try:
            decode_point(body[4:])
        except EccError as exc:
            raise EncodingError(str(exc)) from exc
        return JoinRequest(int.from_bytes(body[:4], "big"), body[4:])
    if kind == Kind.PACKET_IN:
        (port,) = struct.unpack(">H", body[:2])
        return PacketIn(port, body[2:])
    if kind == Kind.PACKET_OUT:
        (port,) = struct.unpack(">H", body[:2])
        return PacketOut(port, body[2:])
    if kind == Kind.FLOW_MOD:
        if len(body) != 15:
            raise EncodingError("FlowMod body must be 15 bytes")
        op, prio = struct.unpack(">BH", body[:3])
        match = _decode_match(body[3:12])
        act, port = struct.unpack(">BH", body[12:15])
        try:
            return FlowMod(FlowModOp(op), prio, match, Action(ActionKind(act), port))
        except ValueError:
            raise EncodingError("bad FlowMod op/action") from None
    if kind == Kind.STATS_REPORT:
        (count,) = struct.unpack(">H", body[:2])
        if len(body) != 2 + 25 * count:
            raise EncodingError("StatsReport length mismatch")
        entries = []
        for i in range(count):
            off = 2 + 25 * i
            pk, by = struct.unpack(">QQ", body[off + 9:off + 25])
            entries.append(StatEntry(_decode_match(body[off:off + 9]), pk, by))
        return StatsReport(tuple(entries))
    if kind == Kind.REVOKE:
        (count,) = struct.unpack(">H", body[:2])
        if len(body) != 2 + 4 * count:
            raise EncodingError("Revoke length mismatch")
        return Revoke(tuple(struct.unpack(f">{count}I", body[2:])))
    if kind == Kind.DATA:
        return Data(decode_packet(body))
    raise EncodingError(f"no decoder for {kind.name}")


# ---------------------------------------------------------------- flow table

@dataclass
class FlowEntry:
    match: FlowMatch
    priority: int
    action: Action
    packets: int = 0
    bytes: int = 0


class FlowTable:
    """Single-table, priority-ordered match/action store.

    Priorities are unique within a table, so matching is deterministic.
    Packets matching nothing go to the controller (table-miss).
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self.entries: list[FlowEntry] = []
        self.miss_count = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, src: int, dst: int, msg_type: int) -> Optional[FlowEntry]:
        # entries kept sorted by descending priority
        for entry in self.entries:
            if entry.match.matches(src, dst, msg_type):
                return entry
        return None

    def match_packet(self, pkt: Packet, size: Optional[int] = None) -> Action:
        entry = self.lookup(pkt.src, pkt.dst, pkt.msg_type)
        if entry is None:
            self.miss_count += 1
            return TO_CONTROLLER
        entry.packets += 1
        entry.bytes += len(encode_packet(pkt)) if size is None else size
        return entry.action

    def apply_flow_mod(self, mod: FlowMod) -> "FlowTable":
        if mod.op == FlowModOp.ADD:
            if mod.match.is_all_wildcard:
                raise FlowModError("all-wildcard match is reserved for table-miss")
            if any(e.priority == mod.priority for e in self.entries):
                raise FlowModError(f"priority {mod.priority} already in use")
            if len(self.entries) >= self.capacity:
                raise FlowModError(f"table full ({self.capacity} entries)")
            self.entries.append(FlowEntry(mod.match, mod.priority, mod.action))
            self.entries.sort(key=lambda e: -e.priority)
        else:
            kept = [e for e in self.entries if e.match != mod.match]
            if len(kept) == len(self.entries):
                raise FlowModError(f"no entry matches {mod.match}")
            self.entries = kept
        return self

    def stats(self) -> StatsReport:
        return StatsReport(tuple(StatEntry(e.match, e.packets, e.bytes) for e in self.entries))

    def offered(self) -> int:
        return self.miss_count + sum(e.packets for e in self.entries)


def match_packet(table: FlowTable, pkt: Packet) -> Action:
    return table.match_packet(pkt)


def apply_flow_mod(table: FlowTable, mod: FlowMod) -> FlowTable:
    return table.apply_flow_mod(mod)
