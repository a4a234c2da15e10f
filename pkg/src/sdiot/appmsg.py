"""Payload layouts carried inside data packets (control and service types).

Control payloads (gateway -> device) start with an opcode byte; service
payloads likewise.  Reading and auth payloads are defined in
:mod:`sdiot.privacy` and :mod:`sdiot.authn`.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from .errors import EncodingError


class Ctrl(enum.IntEnum):
    KEY_DELIVERY = 1
    ACCESS_GRANT = 2
    REJECT = 3
    CONFIG = 4


class Svc(enum.IntEnum):
    REQUEST = 1  # generic request to a gateway-hosted service
    READ = 2     # read another device's stored readings (dst = that device)
    DATA = 3     # stored readings, answered to a READ


_KEY = struct.Struct(">BIII")
_GRANT = struct.Struct(">BIQ")
_REJECT = struct.Struct(">BB")


class RejectReason(enum.IntEnum):
    DUPLICATE = 1
    REVOKED = 2
    UNPROVISIONED = 3
    AUTH_FAILED = 4
    QUARANTINED = 5


@dataclass(frozen=True)
class KeyDelivery:
    epoch: int
    valid_from: int
    valid_to: int
    wrapped: bytes

    def encode(self) -> bytes:
        return _KEY.pack(Ctrl.KEY_DELIVERY, self.epoch, self.valid_from, self.valid_to) + self.wrapped


@dataclass(frozen=True)
class AccessGrant:
    first_round: int
    session: int = 0

    def encode(self) -> bytes:
        return _GRANT.pack(Ctrl.ACCESS_GRANT, self.first_round, self.session)


@dataclass(frozen=True)
class Reject:
    reason: RejectReason

    def encode(self) -> bytes:
        return _REJECT.pack(Ctrl.REJECT, self.reason)


@dataclass(frozen=True)
class ConfigCommand:
    command: bytes

    def encode(self) -> bytes:
        return bytes([Ctrl.CONFIG]) + self.command


def decode_control(payload: bytes):
    if not payload:
        raise EncodingError("empty control payload")
    op = payload[0]
    try:
        if op == Ctrl.KEY_DELIVERY:
            _, e, a, b = _KEY.unpack_from(payload)
            return KeyDelivery(e, a, b, payload[_KEY.size:])
        if op == Ctrl.ACCESS_GRANT:
            _, r, s = _GRANT.unpack(payload)
            return AccessGrant(r, s)
        if op == Ctrl.REJECT:
            _, reason = _REJECT.unpack(payload)
            return Reject(RejectReason(reason))
        if op == Ctrl.CONFIG:
            return ConfigCommand(payload[1:])
    except (struct.error, ValueError) as exc:
        raise EncodingError(f"bad control payload: {exc}") from None
    raise EncodingError(f"unknown control opcode {op}")


@dataclass(frozen=True)
class ServiceRequest:
    body: bytes = b""

    def encode(self) -> bytes:
        return bytes([Svc.REQUEST]) + self.body


@dataclass(frozen=True)
class StorageRead:
    def encode(self) -> bytes:
        return bytes([Svc.READ])


@dataclass(frozen=True)
class StorageData:
    requester: int
    values: tuple[int, ...]

    def encode(self) -> bytes:
        return (bytes([Svc.DATA]) + self.requester.to_bytes(4, "big")
                + b"".join(v.to_bytes(8, "big") for v in self.values))


def decode_service(payload: bytes):
    if not payload:
        raise EncodingError("empty service payload")
    op = payload[0]
    if op == Svc.REQUEST:
        return ServiceRequest(payload[1:])
    if op == Svc.READ:
        if len(payload) != 1:
            raise EncodingError("storage read carries no body")
        return StorageRead()
    if op == Svc.DATA:
        body = payload[1:]
        if len(body) < 4 or (len(body) - 4) % 8:
            raise EncodingError("storage data length")
        vals = tuple(int.from_bytes(body[i:i + 8], "big") for i in range(4, len(body), 8))
        return StorageData(int.from_bytes(body[:4], "big"), vals)
    raise EncodingError(f"unknown service opcode {op}")
