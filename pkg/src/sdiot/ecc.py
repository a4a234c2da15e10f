"""Prime-field short-Weierstrass curve arithmetic.

Two curve profiles ship with the package: ``TOY`` (p=17, fully enumerable,
used by the brute-force oracles in the tests) and ``P192`` (secp192r1, used
for scenario runs).  Arithmetic is *not* constant time; side-channel
resistance is out of scope for a desk-scale simulator.

Points are immutable :class:`CurvePoint` values; the point at infinity is
``INFINITY``.  Internally scalar multiplication runs in Jacobian coordinates
so that only one field inversion is paid per multiplication.
"""
from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Optional

from .errors import EccError

#: single project-wide hash; every KDF, PRF, MAC and challenge hash uses it
HASH = hashlib.sha256
HASH_LEN = 32


@dataclass(frozen=True)
class CurvePoint:
    x: Optional[int]
    y: Optional[int]

    @property
    def is_infinity(self) -> bool:
        return self.x is None

    def __repr__(self) -> str:
        if self.is_infinity:
            return "CurvePoint(inf)"
        return f"CurvePoint({self.x:#x}, {self.y:#x})"


INFINITY = CurvePoint(None, None)


@dataclass(frozen=True)
class Curve:
    name: str
    p: int
    a: int
    b: int
    gx: int
    gy: int
    n: int

    def __post_init__(self):
        if (4 * self.a ** 3 + 27 * self.b ** 2) % self.p == 0:
            raise EccError(f"{self.name}: singular curve")
        if not self.contains(self.G):
            raise EccError(f"{self.name}: base point not on curve")

    @property
    def G(self) -> CurvePoint:
        return CurvePoint(self.gx, self.gy)

    @property
    def coord_len(self) -> int:
        return (self.p.bit_length() + 7) // 8

    @property
    def scalar_len(self) -> int:
        return (self.n.bit_length() + 7) // 8

    def contains(self, P: CurvePoint) -> bool:
        if P.is_infinity:
            return True
        x, y = P.x, P.y
        if not (0 <= x < self.p and 0 <= y < self.p):
            return False
        return (y * y - x * x * x - self.a * x - self.b) % self.p == 0

    def check(self, P: CurvePoint) -> None:
        if not self.contains(P):
            raise EccError(f"point {P!r} is not on {self.name}")

    def negate(self, P: CurvePoint) -> CurvePoint:
        if P.is_infinity:
            return P
        return CurvePoint(P.x, (-P.y) % self.p)


TOY = Curve("toy17", p=17, a=2, b=2, gx=5, gy=1, n=19)

P192 = Curve(
    "secp192r1",
    p=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFFFFFFFFFFFF,
    a=0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEFFFFFFFFFFFFFFFC,
    b=0x64210519E59C80E70FA7E9AB72243049FEB8DEECC146B9B1,
    gx=0x188DA80EB03090F67CBF20EB43A18800F4FF0AFD82FF1012,
    gy=0x07192B95FFC8DA78631011ED6B24CDD573F977A11E794811,
    n=0xFFFFFFFFFFFFFFFFFFFFFFFF99DEF836146BC9B1B4D22831,
)

CURVES = {"toy": TOY, "p192": P192}


def get_curve(name: str) -> Curve:
    try:
        return CURVES[name]
    except KeyError:
        raise EccError(f"unknown curve profile {name!r}") from None


# ---------------------------------------------------------------- group law

def point_add(curve: Curve, P: CurvePoint, Q: CurvePoint) -> CurvePoint:
    """Affine group law, with identity and inverse cases."""
    curve.check(P)
    curve.check(Q)
    return _affine_add(curve, P, Q)


def _affine_add(curve: Curve, P: CurvePoint, Q: CurvePoint) -> CurvePoint:
    if P.is_infinity:
        return Q
    if Q.is_infinity:
        return P
    p = curve.p
    if P.x == Q.x:
        if (P.y + Q.y) % p == 0:
            return INFINITY
        lam = (3 * P.x * P.x + curve.a) * pow(2 * P.y, -1, p) % p
    else:
        lam = (Q.y - P.y) * pow(Q.x - P.x, -1, p) % p
    x3 = (lam * lam - P.x - Q.x) % p
    return CurvePoint(x3, (lam * (P.x - x3) - P.y) % p)


# Jacobian (X, Y, Z) with x = X/Z^2, y = Y/Z^3; Z == 0 is infinity.

def _jdouble(curve: Curve, X, Y, Z):
    if Z == 0 or Y == 0:
        return 0, 1, 0
    p = curve.p
    YY = Y * Y % p
    S = 4 * X * YY % p
    ZZ = Z * Z % p
    M = (3 * X * X + curve.a * ZZ * ZZ) % p
    X3 = (M * M - 2 * S) % p
    Y3 = (M * (S - X3) - 8 * YY * YY) % p
    Z3 = 2 * Y * Z % p
    return X3, Y3, Z3


def _jadd_affine(curve: Curve, X1, Y1, Z1, x2, y2):
    """Jacobian + affine (mixed) addition."""
    if Z1 == 0:
        return x2, y2, 1
    p = curve.p
    Z1Z1 = Z1 * Z1 % p
    U2 = x2 * Z1Z1 % p
    S2 = y2 * Z1 * Z1Z1 % p
    H = (U2 - X1) % p
    r = (S2 - Y1) % p
    if H == 0:
        if r == 0:
            return _jdouble(curve, X1, Y1, Z1)
        return 0, 1, 0
    HH = H * H % p
    HHH = H * HH % p
    V = X1 * HH % p
    X3 = (r * r - HHH - 2 * V) % p
    Y3 = (r * (V - X3) - Y1 * HHH) % p
    Z3 = Z1 * H % p
    return X3, Y3, Z3


def _to_affine(curve: Curve, X, Y, Z) -> CurvePoint:
    if Z == 0:
        return INFINITY
    p = curve.p
    zi = pow(Z, -1, p)
    zi2 = zi * zi % p
    return CurvePoint(X * zi2 % p, Y * zi2 * zi % p)


def scalar_mul(curve: Curve, k: int, P: CurvePoint) -> CurvePoint:
    """``k * P`` by left-to-right double-and-add."""
    curve.check(P)
    if k < 0:
        raise EccError("negative scalar")
    if P.is_infinity or k == 0:
        return INFINITY
    if P == curve.G and curve.p.bit_length() > 64:
        return _fixed_base(curve).mul(k)
    X, Y, Z = 0, 1, 0
    x, y = P.x, P.y
    for bit in bin(k)[2:]:
        X, Y, Z = _jdouble(curve, X, Y, Z)
        if bit == "1":
            X, Y, Z = _jadd_affine(curve, X, Y, Z, x, y)
    return _to_affine(curve, X, Y, Z)


class FixedBaseTable:
    """Comb table for repeated multiplication of one base point.

    Stores ``j * 16**i * B`` for every 4-bit digit position ``i``; a
    multiplication then costs one mixed addition per nonzero digit and no
    doublings.
    """

    WIDTH = 4

    def __init__(self, curve: Curve, base: CurvePoint):
        curve.check(base)
        self.curve = curve
        self.base = base
        digits = (curve.n.bit_length() + self.WIDTH - 1) // self.WIDTH + 1
        self.rows: list[list[CurvePoint]] = []
        row_base = base
        for _ in range(digits):
            row = [INFINITY, row_base]
            for _ in range(2, 1 << self.WIDTH):
                row.append(_affine_add(curve, row[-1], row_base))
            self.rows.append(row)
            row_base = _affine_add(curve, row[-1], row_base)  # 16 * row_base
        self._limit = 1 << (self.WIDTH * digits)

    def mul(self, k: int) -> CurvePoint:
        if k < 0:
            raise EccError("negative scalar")
        k %= self.curve.n
        X, Y, Z = 0, 1, 0
        mask = (1 << self.WIDTH) - 1
        i = 0
        while k:
            d = k & mask
            if d:
                pt = self.rows[i][d]
                if not pt.is_infinity:
                    X, Y, Z = _jadd_affine(self.curve, X, Y, Z, pt.x, pt.y)
            k >>= self.WIDTH
            i += 1
        return _to_affine(self.curve, X, Y, Z)


_TABLES: dict[tuple[str, CurvePoint], FixedBaseTable] = {}


def _fixed_base(curve: Curve, base: Optional[CurvePoint] = None) -> FixedBaseTable:
    base = curve.G if base is None else base
    key = (curve.name, base)
    table = _TABLES.get(key)
    if table is None:
        if len(_TABLES) > 256:
            _TABLES.clear()
        table = _TABLES[key] = FixedBaseTable(curve, base)
    return table


def fixed_base_mul(curve: Curve, k: int, base: CurvePoint) -> CurvePoint:
    """``k * base`` for a base point that will be reused many times."""
    if curve.p.bit_length() <= 64:
        return scalar_mul(curve, k, base)
    return _fixed_base(curve, base).mul(k)


# ---------------------------------------------------------------- keys / ECDH

@dataclass(frozen=True)
class KeyPair:
    curve: Curve = field(repr=False)
    secret: int = field(repr=False)
    public: CurvePoint


def random_scalar(curve: Curve, rng: random.Random) -> int:
    """Uniform scalar in [1, n-1] by rejection sampling."""
    bits = curve.n.bit_length()
    while True:
        k = rng.getrandbits(bits)
        if 1 <= k < curve.n:
            return k


def generate_keypair(curve: Curve, rng: random.Random) -> KeyPair:
    secret = random_scalar(curve, rng)
    return KeyPair(curve, secret, scalar_mul(curve, secret, curve.G))


@dataclass(frozen=True)
class SharedSecret:
    point: CurvePoint = field(repr=False)
    key: bytes = field(repr=False)


def kdf(curve: Curve, point: CurvePoint) -> bytes:
    return HASH(point.x.to_bytes(curve.coord_len, "big")).digest()


def derive_shared(curve: Curve, secret: int, peer: CurvePoint) -> SharedSecret:
    """ECDH: ``secret * peer`` and the symmetric key hashed from its x."""
    if peer.is_infinity:
        raise EccError("peer public point is the point at infinity")
    curve.check(peer)
    if not 1 <= secret < curve.n:
        raise EccError("secret scalar out of range")
    shared = scalar_mul(curve, secret, peer)
    if shared.is_infinity:
        raise EccError("shared point is infinity (small-order peer)")
    return SharedSecret(shared, kdf(curve, shared))


# ---------------------------------------------------------------- encoding

def encode_point(curve: Curve, P: CurvePoint) -> bytes:
    if P.is_infinity:
        return b"\x00"
    w = curve.coord_len
    return b"\x04" + P.x.to_bytes(w, "big") + P.y.to_bytes(w, "big")


def decode_point(data: bytes) -> CurvePoint:
    """Parse a point encoding; width is taken from the data length.

    No on-curve check here, callers validate against their curve.
    """
    if data == b"\x00":
        return INFINITY
    if len(data) < 3 or data[0] != 0x04 or (len(data) - 1) % 2:
        raise EccError("malformed point encoding")
    w = (len(data) - 1) // 2
    return CurvePoint(int.from_bytes(data[1:1 + w], "big"),
                      int.from_bytes(data[1 + w:], "big"))


def point_encoding_len(curve: Curve) -> int:
    return 1 + 2 * curve.coord_len


# ---------------------------------------------------------------- Schnorr

def _challenge(curve: Curve, R: CurvePoint, public: CurvePoint, message: bytes) -> int:
    h = HASH(encode_point(curve, R) + encode_point(curve, public) + message)
    return int.from_bytes(h.digest(), "big") % curve.n


def schnorr_sign(keypair: KeyPair, message: bytes) -> tuple[int, int]:
    """Schnorr signature ``(e, s)`` with a hash-derived nonce."""
    curve = keypair.curve
    seed = HASH(keypair.secret.to_bytes(curve.scalar_len, "big") + message).digest()
    k = int.from_bytes(seed, "big") % (curve.n - 1) + 1
    R = scalar_mul(curve, k, curve.G)
    e = _challenge(curve, R, keypair.public, message)
    s = (k + e * keypair.secret) % curve.n
    return e, s


def schnorr_verify(curve: Curve, public: CurvePoint, message: bytes,
                   signature: tuple[int, int]) -> bool:
    e, s = signature
    if not (0 <= e < curve.n and 0 <= s < curve.n):
        return False
    if public.is_infinity or not curve.contains(public):
        return False
    sG = scalar_mul(curve, s, curve.G)
    eP = fixed_base_mul(curve, e, public)
    R = _affine_add(curve, sG, curve.negate(eP))
    if R.is_infinity:
        return False
    return _challenge(curve, R, public, message) == e
