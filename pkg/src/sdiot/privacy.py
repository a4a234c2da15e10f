"""Reading confidentiality/integrity and additive-sharing aggregation.

A device splits each reading into ``m`` additive shares modulo a prime
``q``, encrypts the share vector under an ephemeral ECDH key agreed with
the gateway's public point, and signs ``ephemeral_pub | ciphertext`` with
its own key (Schnorr).  The gateway's aggregator instances each sum one
share index across devices; only the recombined total is ever released.
"""
from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import ecc
from .ecc import Curve, CurvePoint, KeyPair
from .errors import (AggregationError, CredentialExpiredError, EccError,
                     RegistrationError)
from .symmetric import decrypt, encrypt

SMC_MODULUS = (1 << 61) - 1  # Mersenne prime
SHARE_LEN = 8
MAX_READING = (1 << 32) - 1
MAX_DEVICES = 1 << 16
DEFAULT_AGGREGATORS = 3
DEFAULT_LIFETIME = 10_000

assert SMC_MODULUS > MAX_READING * MAX_DEVICES


class IntegrityError(Exception):
    """Packet failed structural, signature or freshness checks."""

    def __init__(self, reason: str, spoofed: bool = False):
        super().__init__(reason)
        self.reason = reason
        self.spoofed = spoofed


@dataclass(frozen=True)
class Credential:
    node: int
    device_keypair: KeyPair = field(repr=False)
    gateway_pub: CurvePoint
    smc_modulus: int
    valid_from: int
    valid_to: int
    epoch: int = 1
    aggregators: int = DEFAULT_AGGREGATORS

    def __post_init__(self):
        if self.valid_from >= self.valid_to:
            raise RegistrationError("credential validity range is empty")
        if self.smc_modulus <= MAX_READING * MAX_DEVICES:
            raise RegistrationError("SMC modulus too small for reading range")

    @property
    def curve(self) -> Curve:
        return self.device_keypair.curve

    @property
    def public(self) -> CurvePoint:
        return self.device_keypair.public

    def live_at(self, tick: int) -> bool:
        return self.valid_from <= tick < self.valid_to


class CredentialStore:
    """At most one live credential per node."""

    def __init__(self, curve: Curve, gateway_pub: CurvePoint, lifetime: int = DEFAULT_LIFETIME,
                 modulus: int = SMC_MODULUS, aggregators: int = DEFAULT_AGGREGATORS):
        self.curve = curve
        self.gateway_pub = gateway_pub
        self.lifetime = lifetime
        self.modulus = modulus
        self.aggregators = aggregators
        self.live: dict[int, Credential] = {}
        self.retired: list[Credential] = []

    def issue_credentials(self, node: int, tick: int, rng: Optional[random.Random] = None,
                          keypair: Optional[KeyPair] = None, epoch: int = 1) -> Credential:
        if node in self.live:
            raise RegistrationError(f"node {node} already holds a live credential")
        if keypair is None:
            if rng is None:
                raise ValueError("need an rng or a keypair")
            keypair = ecc.generate_keypair(self.curve, rng)
        cred = Credential(node, keypair, self.gateway_pub, self.modulus,
                          tick, tick + self.lifetime, epoch, self.aggregators)
        self.live[node] = cred
        return cred

    def retire(self, node: int) -> Optional[Credential]:
        cred = self.live.pop(node, None)
        if cred is not None:
            self.retired.append(cred)
        return cred

    def get(self, node: int) -> Optional[Credential]:
        return self.live.get(node)


def issue_credentials(store: CredentialStore, node: int, tick: int, rng: random.Random,
                      keypair: Optional[KeyPair] = None) -> Credential:
    return store.issue_credentials(node, tick, rng, keypair)


# ---------------------------------------------------------------- SMC

@dataclass(frozen=True)
class SmcShareSet:
    owner: int
    shares: tuple[int, ...]
    modulus: int = SMC_MODULUS

    @property
    def m(self) -> int:
        return len(self.shares)

    @property
    def value(self) -> int:
        return sum(self.shares) % self.modulus


def smc_split(value: int, m: int = DEFAULT_AGGREGATORS, q: int = SMC_MODULUS, *,
              rng: random.Random, owner: int = 0, max_devices: int = MAX_DEVICES) -> SmcShareSet:
    """``m - 1`` uniform shares plus one balancing share, summing to ``value``."""
    if m < 2:
        raise ValueError("need at least two aggregators")
    if not 0 <= value < q // max_devices:
        raise ValueError(f"value {value} outside [0, {q // max_devices})")
    shares = [rng.randrange(q) for _ in range(m - 1)]
    shares.append((value - sum(shares)) % q)
    return SmcShareSet(owner, tuple(shares), q)


def complete_share(partial: Sequence[int], target: int, q: int = SMC_MODULUS) -> int:
    """The unique last share making ``partial`` sum to ``target`` mod q."""
    return (target - sum(partial)) % q


@dataclass(frozen=True)
class AggregateResult:
    mode: str
    value: float
    total: int
    count: int


def aggregator_subtotals(share_sets: Sequence[SmcShareSet], m: int,
                         q: int = SMC_MODULUS) -> list[int]:
    """Each aggregator instance sums its own share index across devices."""
    subtotals = [0] * m
    for s in share_sets:
        if s.m != m:
            raise AggregationError(f"share set of node {s.owner} has {s.m} shares, expected {m}")
        for j, v in enumerate(s.shares):
            subtotals[j] = (subtotals[j] + v) % q
    return subtotals


def smc_combine(per_aggregator_sums: Sequence[Optional[int]], q: int = SMC_MODULUS,
                mode: str = "sum", device_count: int = 0, m: Optional[int] = None) -> AggregateResult:
    if m is not None and len(per_aggregator_sums) != m:
        raise AggregationError(f"expected {m} aggregator subtotals, got {len(per_aggregator_sums)}")
    if len(per_aggregator_sums) < 2 or any(v is None for v in per_aggregator_sums):
        raise AggregationError("missing aggregator subtotal; no partial result released")
    total = sum(per_aggregator_sums) % q
    if mode == "sum":
        value: float = total
    elif mode == "mean":
        if device_count <= 0:
            raise AggregationError("mean over zero devices")
        value = total / device_count
    elif mode == "count":
        value = device_count
    else:
        raise ValueError(f"unknown aggregate mode {mode!r}")
    return AggregateResult(mode, value, total, device_count)


# ---------------------------------------------------------------- packets

@dataclass(frozen=True)
class CipherPacket:
    node: int
    ephemeral_pub: CurvePoint
    ciphertext: bytes
    signature: tuple[int, int]

    def signed_bytes(self, curve: Curve) -> bytes:
        return ecc.encode_point(curve, self.ephemeral_pub) + self.ciphertext

    def encode(self, curve: Curve) -> bytes:
        w = curve.scalar_len
        e, s = self.signature
        return (self.node.to_bytes(4, "big") + ecc.encode_point(curve, self.ephemeral_pub)
                + len(self.ciphertext).to_bytes(2, "big") + self.ciphertext
                + e.to_bytes(w, "big") + s.to_bytes(w, "big"))

    @classmethod
    def decode(cls, data: bytes, curve: Curve) -> "CipherPacket":
        plen = ecc.point_encoding_len(curve)
        w = curve.scalar_len
        if len(data) < 4 + plen + 2 + 2 * w:
            raise IntegrityError("cipher packet truncated")
        node = int.from_bytes(data[:4], "big")
        try:
            eph = ecc.decode_point(data[4:4 + plen])
        except EccError:
            raise IntegrityError("bad ephemeral point encoding") from None
        off = 4 + plen
        ct_len = int.from_bytes(data[off:off + 2], "big")
        off += 2
        if len(data) != off + ct_len + 2 * w:
            raise IntegrityError("cipher packet length mismatch")
        ct = data[off:off + ct_len]
        off += ct_len
        e = int.from_bytes(data[off:off + w], "big")
        s = int.from_bytes(data[off + w:], "big")
        return cls(node, eph, bytes(ct), (e, s))


@dataclass(frozen=True)
class ReadingBody:
    seq: int
    shares: tuple[int, ...]
    modulus: int = SMC_MODULUS

    @property
    def value(self) -> int:
        return sum(self.shares) % self.modulus

    def encode(self) -> bytes:
        return (struct.pack(">IB", self.seq, len(self.shares))
                + b"".join(s.to_bytes(SHARE_LEN, "big") for s in self.shares))

    @classmethod
    def decode(cls, data: bytes, modulus: int = SMC_MODULUS) -> "ReadingBody":
        if len(data) < 5:
            raise IntegrityError("reading body truncated")
        seq, m = struct.unpack(">IB", data[:5])
        if m < 2 or len(data) != 5 + SHARE_LEN * m:
            raise IntegrityError("reading body share count mismatch")
        shares = tuple(int.from_bytes(data[5 + SHARE_LEN * i:5 + SHARE_LEN * (i + 1)], "big")
                       for i in range(m))
        if any(s >= modulus for s in shares):
            raise IntegrityError("share outside field")
        return cls(seq, shares, modulus)


def protect_reading(cred: Credential, value: int, *, seq: int, tick: int,
                    rng: random.Random) -> CipherPacket:
    """Split, encrypt to the gateway and sign one reading."""
    if not cred.live_at(tick):
        raise CredentialExpiredError(
            f"credential of node {cred.node} not valid at tick {tick} "
            f"[{cred.valid_from}, {cred.valid_to})")
    curve = cred.curve
    shares = smc_split(value, cred.aggregators, cred.smc_modulus, rng=rng, owner=cred.node)
    body = ReadingBody(seq, shares.shares, cred.smc_modulus).encode()
    eph = ecc.generate_keypair(curve, rng)
    shared = ecc.fixed_base_mul(curve, eph.secret, cred.gateway_pub)
    ct = encrypt(ecc.kdf(curve, shared), body)
    eph_bytes = ecc.encode_point(curve, eph.public)
    sig = ecc.schnorr_sign(cred.device_keypair, eph_bytes + ct)
    return CipherPacket(cred.node, eph.public, ct, sig)


def verify_packet(packet: CipherPacket, curve: Curve, device_pub: CurvePoint) -> bool:
    return ecc.schnorr_verify(curve, device_pub, packet.signed_bytes(curve), packet.signature)


def open_reading(packet: CipherPacket, gateway: KeyPair, device_pub: CurvePoint,
                 modulus: int = SMC_MODULUS) -> ReadingBody:
    """Verify the device signature, then decrypt the share vector.

    Raises :class:`IntegrityError`; ``spoofed`` is set when the signature
    does not verify under the claimed node's registered key.
    """
    curve = gateway.curve
    if packet.ephemeral_pub.is_infinity or not curve.contains(packet.ephemeral_pub):
        raise IntegrityError("ephemeral point not on curve")
    if not verify_packet(packet, curve, device_pub):
        raise IntegrityError("signature invalid", spoofed=True)
    shared = ecc.derive_shared(curve, gateway.secret, packet.ephemeral_pub)
    return ReadingBody.decode(decrypt(shared.key, packet.ciphertext), modulus)


# plaintext body used when the privacy module is disabled
PLAIN = struct.Struct(">IQ")


def plain_reading(seq: int, value: int) -> bytes:
    return PLAIN.pack(seq, value)


def parse_plain_reading(data: bytes) -> tuple[int, int]:
    if len(data) != PLAIN.size:
        raise IntegrityError("plain reading has wrong length")
    return PLAIN.unpack(data)
