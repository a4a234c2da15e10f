"""Hash-based symmetric helpers: counter-mode keystream and HMAC."""
from __future__ import annotations

import hmac

from .ecc import HASH, HASH_LEN


def keystream(key: bytes, length: int, label: bytes = b"ks") -> bytes:
    """Iterated-hash counter mode: H(key | label | ctr) blocks, truncated."""
    blocks = []
    for ctr in range((length + HASH_LEN - 1) // HASH_LEN):
        blocks.append(HASH(key + label + ctr.to_bytes(4, "big")).digest())
    return b"".join(blocks)[:length]


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


def encrypt(key: bytes, plaintext: bytes, label: bytes = b"ks") -> bytes:
    return xor_bytes(plaintext, keystream(key, len(plaintext), label))


decrypt = encrypt


def mac(key: bytes, *parts: bytes) -> bytes:
    return hmac.new(key, b"".join(parts), HASH).digest()


def mac_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)
