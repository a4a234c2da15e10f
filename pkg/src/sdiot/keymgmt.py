"""Key generation, ECDH distribution, storage, renewal and revocation.

Bootstrap: each device ships with an enrolment keypair and the gateway's
public point.  Operational keypairs are generated here and handed to the
device wrapped under the ECDH key of (gateway, enrolment point), so the
operational secret never crosses the wire in the clear.
"""
from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import ecc, southbound
from .ecc import Curve, CurvePoint, KeyPair
from .errors import EccError, KeyRevokedError
from .symmetric import decrypt, encrypt

log = logging.getLogger(__name__)

DEFAULT_LIFETIME = 10_000
RENEW_FRACTION = 0.8
GATEWAY = 0
_WRAP_LABEL = b"wrap"


class KeyState(enum.Enum):
    LIVE = "live"
    REVOKED = "revoked"


@dataclass
class KeyStoreEntry:
    node: int
    public: CurvePoint
    epoch: int
    issued_at: int
    expires_at: int
    state: KeyState = KeyState.LIVE
    pairwise: dict[int, bytes] = field(default_factory=dict, repr=False)

    @property
    def live(self) -> bool:
        return self.state is KeyState.LIVE


@dataclass(frozen=True)
class RevocationReceipt:
    nodes: tuple[int, ...]
    reason: str
    tick: int
    message: Optional[southbound.Revoke]
    wire: bytes = b""


@dataclass(frozen=True)
class ExchangeTranscript:
    """What crossed the (insecure) channel during a pairwise agreement."""

    a: int
    b: int
    a_public: bytes
    b_public: bytes


class KeyManager:
    """Single-writer keystore living on the controller path."""

    def __init__(self, curve: Curve, rng: random.Random, gateway: Optional[KeyPair] = None,
                 lifetime: int = DEFAULT_LIFETIME, renew_fraction: float = RENEW_FRACTION):
        self.curve = curve
        self.rng = rng
        self.gateway = gateway or ecc.generate_keypair(curve, rng)
        self.lifetime = lifetime
        self.renew_fraction = renew_fraction
        self.entries: dict[int, KeyStoreEntry] = {}
        self.history: list[KeyStoreEntry] = []
        self.transcripts: list[ExchangeTranscript] = []
        self.receipts: list[RevocationReceipt] = []
        self._rejoin_ok: set[int] = set()

    # -- lifecycle

    def allow_rejoin(self, node: int) -> None:
        """Explicit re-registration: lets a revoked node obtain a new epoch."""
        self._rejoin_ok.add(node)

    def generate_keypair_for(self, node: int, tick: int = 0) -> tuple[KeyStoreEntry, KeyPair]:
        prev = self.entries.get(node)
        if prev is not None and prev.state is KeyState.REVOKED and node not in self._rejoin_ok:
            raise KeyRevokedError(f"node {node} is revoked; re-registration required")
        self._rejoin_ok.discard(node)
        kp = ecc.generate_keypair(self.curve, self.rng)
        epoch = prev.epoch + 1 if prev is not None else 1
        entry = KeyStoreEntry(node, kp.public, epoch, tick, tick + self.lifetime)
        entry.pairwise[GATEWAY] = ecc.derive_shared(self.curve, self.gateway.secret, kp.public).key
        if prev is not None:
            prev.state = KeyState.REVOKED if prev.state is KeyState.LIVE else prev.state
            self.history.append(prev)
        self.entries[node] = entry
        log.debug("keymgmt: node %d epoch %d issued at %d", node, epoch, tick)
        return entry, kp

    def renewal_due(self, node: int) -> int:
        entry = self.entries[node]
        return entry.issued_at + int(self.lifetime * self.renew_fraction)

    def is_live(self, node: int) -> bool:
        entry = self.entries.get(node)
        return entry is not None and entry.live

    def live_public(self, node: int) -> CurvePoint:
        entry = self.entries.get(node)
        if entry is None or not entry.live:
            raise KeyRevokedError(f"node {node} has no live key")
        return entry.public

    def previous_publics(self, node: int) -> list[CurvePoint]:
        return [e.public for e in self.history if e.node == node]

    def gateway_key(self, node: int) -> bytes:
        """Pairwise node/gateway key; basis of the node's service access key."""
        entry = self.entries.get(node)
        if entry is None or not entry.live:
            raise KeyRevokedError(f"node {node} has no live key")
        return entry.pairwise[GATEWAY]

    def establish_pairwise(self, a: KeyPair, a_node: int, b: KeyPair, b_node: int) -> bytes:
        """Both sides run ECDH from their own secret and the peer's public point."""
        for node in (a_node, b_node):
            if node != GATEWAY and not self.is_live(node):
                raise KeyRevokedError(f"node {node} is not live")
        self.transcripts.append(ExchangeTranscript(
            a_node, b_node, ecc.encode_point(self.curve, a.public), ecc.encode_point(self.curve, b.public)))
        key_a = ecc.derive_shared(self.curve, a.secret, b.public).key
        key_b = ecc.derive_shared(self.curve, b.secret, a.public).key
        if key_a != key_b:
            raise EccError("ECDH disagreement")
        for node, peer in ((a_node, b_node), (b_node, a_node)):
            if node in self.entries:
                self.entries[node].pairwise[peer] = key_a
        return key_a

    def revoke(self, nodes: Iterable[int], reason: str = "", tick: int = 0) -> RevocationReceipt:
        nodes = tuple(dict.fromkeys(nodes))
        if not nodes:
            receipt = RevocationReceipt((), reason, tick, None, b"")
            self.receipts.append(receipt)
            return receipt
        for node in nodes:
            entry = self.entries.get(node)
            if entry is not None:
                entry.state = KeyState.REVOKED
                entry.pairwise.clear()
        msg = southbound.Revoke(nodes)
        receipt = RevocationReceipt(nodes, reason, tick, msg, southbound.encode(msg))
        self.receipts.append(receipt)
        log.info("keymgmt: revoked %s (%s)", ",".join(map(str, nodes)), reason)
        return receipt

    # -- distribution

    def wrap_for(self, keypair: KeyPair, bootstrap_pub: CurvePoint) -> bytes:
        """Operational secret encrypted under ECDH(gateway, bootstrap point)."""
        k = ecc.derive_shared(self.curve, self.gateway.secret, bootstrap_pub).key
        return encrypt(k, keypair.secret.to_bytes(self.curve.scalar_len, "big"), _WRAP_LABEL)


def unwrap_secret(curve: Curve, bootstrap: KeyPair, gateway_pub: CurvePoint, wrapped: bytes) -> KeyPair:
    """Device side of :meth:`KeyManager.wrap_for`."""
    k = ecc.derive_shared(curve, bootstrap.secret, gateway_pub).key
    secret = int.from_bytes(decrypt(k, wrapped, _WRAP_LABEL), "big")
    if not 1 <= secret < curve.n:
        raise EccError("unwrapped scalar out of range")
    return KeyPair(curve, secret, ecc.scalar_mul(curve, secret, curve.G))
