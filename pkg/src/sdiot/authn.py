"""Mutual challenge-response authentication brokered by the gateway.

Every principal shares one key with the broker (its ECDH pairwise key with
the gateway).  A session between the gateway and principal ``P`` runs on
``P``'s key; the two proofs are bound to different nonces and principal
ids so one cannot be reflected as the other::

    responder proof  = MAC(K, nonce_i | responder)
    initiator proof  = MAC(K, nonce_r | initiator)
"""
from __future__ import annotations

import enum
import logging
import random
import struct
from collections import Counter
from dataclasses import dataclass
from typing import Optional

from .errors import AuthError, KeyRevokedError
from .symmetric import mac, mac_equal

log = logging.getLogger(__name__)

NONCE_LEN = 16
PROOF_LEN = 32
DEFAULT_TIMEOUT = 50
BROKER = 0
ZERO_PROOF = bytes(PROOF_LEN)


class SessionState(enum.Enum):
    ISSUED = "issued"
    HALF = "half-authenticated"
    MUTUAL = "mutual"
    FAILED = "failed"


class Role(enum.Enum):
    INITIATOR = "initiator"
    RESPONDER = "responder"


@dataclass
class ServiceAccessKey:
    principal: int
    key: bytes
    issued_at: int
    revoked: bool = False

    def __repr__(self) -> str:
        return f"ServiceAccessKey(principal={self.principal}, issued_at={self.issued_at}, revoked={self.revoked})"


@dataclass
class ChallengeSession:
    session_id: int
    initiator: int
    responder: int
    nonce_i: bytes
    expiry: int
    nonce_r: Optional[bytes] = None
    state: SessionState = SessionState.ISSUED
    reason: str = ""

    @property
    def peer(self) -> int:
        """Principal whose broker key protects this session."""
        return self.responder if self.initiator == BROKER else self.initiator


def make_proof(key: bytes, nonce: bytes, principal: int) -> bytes:
    return mac(key, nonce, principal.to_bytes(4, "big"))


AUTH_FRAME = struct.Struct(f">Q{NONCE_LEN}s{PROOF_LEN}s")


@dataclass(frozen=True)
class AuthFrame:
    session: int
    nonce: bytes
    proof: bytes = ZERO_PROOF

    def encode(self) -> bytes:
        return AUTH_FRAME.pack(self.session, self.nonce, self.proof)

    @classmethod
    def decode(cls, data: bytes) -> "AuthFrame":
        if len(data) != AUTH_FRAME.size:
            raise AuthError(f"auth frame must be {AUTH_FRAME.size} bytes, got {len(data)}")
        return cls(*AUTH_FRAME.unpack(data))

    @property
    def is_challenge(self) -> bool:
        return self.proof == ZERO_PROOF


class AuthBroker:
    def __init__(self, rng: random.Random, timeout: int = DEFAULT_TIMEOUT):
        self.rng = rng
        self.timeout = timeout
        self.keys: dict[int, ServiceAccessKey] = {}
        self.sessions: dict[int, ChallengeSession] = {}
        self.seen_nonces: set[bytes] = set()
        self.spent_proofs: set[bytes] = set()
        self.failures: Counter = Counter()
        self.now = 0

    def register_principal(self, principal: int, key: bytes, tick: int = 0) -> ServiceAccessKey:
        sak = ServiceAccessKey(principal, key, tick)
        self.keys[principal] = sak
        return sak

    def revoke(self, principal: int) -> None:
        sak = self.keys.get(principal)
        if sak is not None:
            sak.revoked = True

    def _live_key(self, principal: int) -> bytes:
        sak = self.keys.get(principal)
        if sak is None or sak.revoked:
            raise KeyRevokedError(f"principal {principal} holds no live service access key")
        return sak.key

    def _fresh_nonce(self) -> bytes:
        while True:
            n = self.rng.getrandbits(8 * NONCE_LEN).to_bytes(NONCE_LEN, "big")
            if n not in self.seen_nonces:
                return n

    def begin(self, initiator: int, responder: int, tick: int, *, nonce: Optional[bytes] = None,
              session_id: Optional[int] = None) -> ChallengeSession:
        """Open a session; ``nonce`` may come from the wire (device-initiated)."""
        self.now = tick
        peer = responder if initiator == BROKER else initiator
        self._live_key(peer)
        if nonce is None:
            nonce = self._fresh_nonce()
        if session_id is None:
            session_id = self.rng.getrandbits(64)
        if session_id in self.sessions:
            raise AuthError(f"session id {session_id:#x} already in use")
        session = ChallengeSession(session_id, initiator, responder, nonce, tick + self.timeout)
        if nonce in self.seen_nonces:
            session.state = SessionState.FAILED
            session.reason = "replay"
            self.failures[peer] += 1
        self.seen_nonces.add(nonce)
        self.sessions[session_id] = session
        return session

    def _expired(self, session: ChallengeSession, tick: int) -> bool:
        if tick > session.expiry:
            if session.state in (SessionState.ISSUED, SessionState.HALF):
                session.state = SessionState.FAILED
                session.reason = "expired"
            return True
        return False

    def respond(self, session: ChallengeSession, responder_key: bytes,
                tick: Optional[int] = None) -> tuple[bytes, bytes]:
        """Responder's proof over ``nonce_i`` plus its counter-challenge."""
        tick = self.now if tick is None else tick
        if self._expired(session, tick) or session.state is not SessionState.ISSUED:
            raise AuthError(f"session {session.session_id:#x} not open ({session.state.value})")
        if session.nonce_r is None:
            session.nonce_r = self._fresh_nonce()
            self.seen_nonces.add(session.nonce_r)
        return make_proof(responder_key, session.nonce_i, session.responder), session.nonce_r

    def attach_counter_nonce(self, session: ChallengeSession, nonce_r: bytes) -> bool:
        """Record a counter-challenge produced off-broker; single-use."""
        if nonce_r in self.seen_nonces:
            self._fail(session, "replay")
            return False
        self.seen_nonces.add(nonce_r)
        session.nonce_r = nonce_r
        return True

    def _fail(self, session: ChallengeSession, reason: str) -> SessionState:
        session.state = SessionState.FAILED
        session.reason = reason
        self.failures[session.peer] += 1
        return session.state

    def verify(self, session_id: int, proof: bytes, role: Role, tick: Optional[int] = None) -> SessionState:
        tick = self.now if tick is None else tick
        session = self.sessions.get(session_id)
        if session is None:
            raise AuthError(f"unknown session {session_id:#x}")
        if self._expired(session, tick):
            return session.state
        if session.state is SessionState.FAILED:
            return session.state
        if session.state is SessionState.MUTUAL:
            # a completed session accepts nothing further; the attempt is a replay
            self.failures[session.peer] += 1
            return SessionState.FAILED
        if proof in self.spent_proofs:
            return self._fail(session, "replay")
        try:
            key = self._live_key(session.peer)
        except KeyRevokedError:
            return self._fail(session, "key-revoked")
        if role is Role.RESPONDER:
            if session.state is not SessionState.ISSUED:
                return self._fail(session, "out-of-order")
            if not mac_equal(proof, make_proof(key, session.nonce_i, session.responder)):
                return self._fail(session, "bad-responder-proof")
            session.state = SessionState.HALF
        else:
            if session.state is not SessionState.HALF or session.nonce_r is None:
                return self._fail(session, "out-of-order")
            if not mac_equal(proof, make_proof(key, session.nonce_r, session.initiator)):
                return self._fail(session, "bad-initiator-proof")
            session.state = SessionState.MUTUAL
        self.spent_proofs.add(proof)
        return session.state
