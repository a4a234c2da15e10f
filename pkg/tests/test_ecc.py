import hashlib
import random

import pytest
from hypothesis import given, settings, strategies as st

from sdiot import ecc
from sdiot.ecc import INFINITY, P192, TOY, CurvePoint
from sdiot.errors import EccError


# -- independent oracle: brute-force enumeration of the toy group

def _oracle_add(P, Q, p=TOY.p, a=TOY.a):
    if P is None:
        return Q
    if Q is None:
        return P
    (x1, y1), (x2, y2) = P, Q
    if x1 == x2 and (y1 + y2) % p == 0:
        return None
    if P == Q:
        lam = (3 * x1 * x1 + a) * pow(2 * y1, p - 2, p) % p
    else:
        lam = (y2 - y1) * pow(x2 - x1, p - 2, p) % p
    x3 = (lam * lam - x1 - x2) % p
    return (x3, (lam * (x1 - x3) - y1) % p)


def _oracle_multiples():
    """k*G for k = 0..n by repeated addition; None is the identity."""
    out, acc = [None], None
    for _ in range(TOY.n):
        acc = _oracle_add(acc, (TOY.gx, TOY.gy))
        out.append(acc)
    return out


MULTIPLES = _oracle_multiples()


def _as_point(t):
    return INFINITY if t is None else CurvePoint(*t)


def test_toy_group_has_prime_order_19():
    affine = [(x, y) for x in range(17) for y in range(17) if (y * y - x ** 3 - 2 * x - 2) % 17 == 0]
    assert len(affine) + 1 == 19
    assert MULTIPLES[19] is None and all(m is not None for m in MULTIPLES[1:19])


def test_scalar_mul_matches_enumeration_for_every_k():
    for k in range(TOY.n + 1):
        got = ecc.scalar_mul(TOY, k, TOY.G)
        assert got == _as_point(MULTIPLES[k]), k
        assert TOY.contains(got)


def test_point_add_matches_oracle_on_all_pairs():
    for i in range(TOY.n):
        for j in range(TOY.n):
            got = ecc.point_add(TOY, _as_point(MULTIPLES[i]), _as_point(MULTIPLES[j]))
            assert got == _as_point(MULTIPLES[(i + j) % TOY.n])


def test_toy_ecdh_thousand_agreements_against_oracle():
    rng = random.Random(2024)
    for _ in range(1000):
        a = ecc.generate_keypair(TOY, rng)
        b = ecc.generate_keypair(TOY, rng)
        sa = ecc.derive_shared(TOY, a.secret, b.public)
        sb = ecc.derive_shared(TOY, b.secret, a.public)
        expect = _as_point(MULTIPLES[a.secret * b.secret % TOY.n])
        assert sa.point == sb.point == expect
        assert sa.key == hashlib.sha256(expect.x.to_bytes(1, "big")).digest()


def test_p192_matches_reference_library():
    ec_mod = pytest.importorskip("cryptography.hazmat.primitives.asymmetric.ec")
    rng = random.Random(7)
    for _ in range(5):
        a = ecc.generate_keypair(P192, rng)
        b = ecc.generate_keypair(P192, rng)
        try:
            ref_a = ec_mod.derive_private_key(a.secret, ec_mod.SECP192R1())
            ref_b = ec_mod.derive_private_key(b.secret, ec_mod.SECP192R1())
        except Exception as exc:  # backend built without P-192
            pytest.skip(f"reference backend lacks P-192: {exc}")
        nums = ref_a.public_key().public_numbers()
        assert (a.public.x, a.public.y) == (nums.x, nums.y)
        x = ref_a.exchange(ec_mod.ECDH(), ref_b.public_key())
        assert ecc.derive_shared(P192, a.secret, b.public).key == hashlib.sha256(x).digest()


def test_generator_has_order_n():
    assert ecc.scalar_mul(P192, P192.n, P192.G) == INFINITY
    assert ecc.scalar_mul(P192, P192.n - 1, P192.G) == P192.negate(P192.G)


def test_fixed_base_agrees_with_double_and_add():
    rng = random.Random(3)
    base = ecc.generate_keypair(P192, rng).public
    for _ in range(10):
        k = rng.randrange(1, P192.n)
        assert ecc.fixed_base_mul(P192, k, base) == ecc.scalar_mul(P192, k, base)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, P192.n - 1), st.integers(1, P192.n - 1))
def test_scalar_mul_is_additive(a, b):
    lhs = ecc.scalar_mul(P192, (a + b) % P192.n, P192.G)
    rhs = ecc.point_add(P192, ecc.scalar_mul(P192, a, P192.G), ecc.scalar_mul(P192, b, P192.G))
    assert lhs == rhs


def test_derive_shared_rejects_bad_peers():
    kp = ecc.generate_keypair(TOY, random.Random(1))
    with pytest.raises(EccError):
        ecc.derive_shared(TOY, kp.secret, INFINITY)
    with pytest.raises(EccError):
        ecc.derive_shared(TOY, kp.secret, CurvePoint(1, 1))
    with pytest.raises(EccError):
        ecc.derive_shared(TOY, 0, kp.public)


def test_point_encoding_roundtrip_and_rejects():
    kp = ecc.generate_keypair(P192, random.Random(5))
    enc = ecc.encode_point(P192, kp.public)
    assert len(enc) == ecc.point_encoding_len(P192) == 49
    assert ecc.decode_point(enc) == kp.public
    assert ecc.decode_point(ecc.encode_point(P192, INFINITY)) == INFINITY
    for bad in (b"", b"\x02" + enc[1:], enc[:-1]):
        with pytest.raises(EccError):
            ecc.decode_point(bad)


def test_schnorr_sign_verify_and_tamper():
    kp = ecc.generate_keypair(P192, random.Random(9))
    sig = ecc.schnorr_sign(kp, b"reading")
    assert ecc.schnorr_verify(P192, kp.public, b"reading", sig)
    assert not ecc.schnorr_verify(P192, kp.public, b"readinG", sig)
    assert not ecc.schnorr_verify(P192, kp.public, b"reading", (sig[0], (sig[1] + 1) % P192.n))
    other = ecc.generate_keypair(P192, random.Random(10))
    assert not ecc.schnorr_verify(P192, other.public, b"reading", sig)


def test_unknown_curve_profile():
    assert ecc.get_curve("toy") is TOY
    with pytest.raises(EccError):
        ecc.get_curve("p256")


def test_toy_ecdh_three_times_nine():
    f_pub = ecc.scalar_mul(TOY, 3, TOY.G)
    g_pub = ecc.scalar_mul(TOY, 9, TOY.G)
    want = _as_point(MULTIPLES[27 % TOY.n])
    assert ecc.scalar_mul(TOY, 3, g_pub) == ecc.scalar_mul(TOY, 9, f_pub) == want
    assert ecc.derive_shared(TOY, 3, g_pub).point == want
