import random

import pytest
from hypothesis import given, settings, strategies as st

from sdiot import ecc, privacy
from sdiot.errors import AggregationError, CredentialExpiredError, RegistrationError
from sdiot.privacy import (MAX_READING, SMC_MODULUS as Q, CipherPacket, CredentialStore, IntegrityError,
                           ReadingBody, aggregator_subtotals, complete_share, smc_combine, smc_split)

CURVE = ecc.P192


@pytest.fixture(scope="module")
def setup():
    rng = random.Random(11)
    gw = ecc.generate_keypair(CURVE, rng)
    store = CredentialStore(CURVE, gw.public, lifetime=1000)
    cred = store.issue_credentials(5, 0, rng)
    return gw, store, cred


@settings(max_examples=200)
@given(st.lists(st.integers(0, MAX_READING), min_size=1, max_size=50), st.integers(2, 5), st.integers(0, 2 ** 32))
def test_combine_equals_plaintext_aggregate(values, m, seed):
    rng = random.Random(seed)
    sets = [smc_split(v, m, rng=rng, owner=i) for i, v in enumerate(values)]
    subtotals = aggregator_subtotals(sets, m)
    assert smc_combine(subtotals, Q, "sum", len(values)).value == sum(values)
    assert smc_combine(subtotals, Q, "mean", len(values)).value == sum(values) / len(values)
    assert smc_combine(subtotals, Q, "count", len(values)).value == len(values)


@settings(max_examples=100)
@given(st.integers(0, MAX_READING), st.integers(2, 5), st.integers(0, MAX_READING), st.integers(0, 2 ** 32))
def test_any_m_minus_one_shares_complete_to_any_value(value, m, candidate, seed):
    shares = smc_split(value, m, rng=random.Random(seed)).shares
    for drop in range(m):
        partial = shares[:drop] + shares[drop + 1:]
        last = complete_share(partial, candidate)
        assert 0 <= last < Q
        assert (sum(partial) + last) % Q == candidate


def test_split_rejects_out_of_range():
    with pytest.raises(ValueError):
        smc_split(Q, rng=random.Random(0))
    with pytest.raises(ValueError):
        smc_split(1, 1, rng=random.Random(0))


def test_combine_refuses_partial_results():
    with pytest.raises(AggregationError):
        smc_combine([1, None, 3], Q)
    with pytest.raises(AggregationError):
        smc_combine([1, 2], Q, m=3)
    with pytest.raises(AggregationError):
        smc_combine([1, 2, 3], Q, "mean", 0)


def test_one_live_credential_per_node(setup):
    gw, store, cred = setup
    with pytest.raises(RegistrationError):
        store.issue_credentials(5, 10, random.Random(1))
    assert store.get(5) is cred
    assert cred.live_at(0) and not cred.live_at(1000)


def test_protect_open_roundtrip(setup):
    gw, _, cred = setup
    rng = random.Random(3)
    pkt = privacy.protect_reading(cred, 4321, seq=7, tick=10, rng=rng)
    wire = pkt.encode(CURVE)
    assert CipherPacket.decode(wire, CURVE) == pkt
    assert (4321).to_bytes(8, "big") not in wire
    body = privacy.open_reading(pkt, gw, cred.public)
    assert (body.seq, body.value, len(body.shares)) == (7, 4321, 3)


def test_expired_credential_refuses(setup):
    _, _, cred = setup
    with pytest.raises(CredentialExpiredError):
        privacy.protect_reading(cred, 1, seq=0, tick=1000, rng=random.Random(0))


def test_tampered_or_forged_packets_rejected(setup):
    gw, _, cred = setup
    pkt = privacy.protect_reading(cred, 99, seq=1, tick=5, rng=random.Random(4))
    wire = bytearray(pkt.encode(CURVE))
    wire[60] ^= 0x01  # inside the ciphertext
    bad = CipherPacket.decode(bytes(wire), CURVE)
    with pytest.raises(IntegrityError) as info:
        privacy.open_reading(bad, gw, cred.public)
    assert info.value.spoofed
    forger = ecc.generate_keypair(CURVE, random.Random(5))
    assert not privacy.verify_packet(pkt, CURVE, forger.public)
    with pytest.raises(IntegrityError):
        CipherPacket.decode(bytes(wire[:-1]), CURVE)


def test_reading_body_and_plain_format():
    body = ReadingBody(3, (1, 2, 3))
    assert ReadingBody.decode(body.encode()) == body
    for bad in (b"", body.encode()[:-1], ReadingBody(3, (Q, 0)).encode()):
        with pytest.raises(IntegrityError):
            ReadingBody.decode(bad)
    assert privacy.parse_plain_reading(privacy.plain_reading(4, 77)) == (4, 77)
    with pytest.raises(IntegrityError):
        privacy.parse_plain_reading(b"\x00" * 11)


def test_hundred_issues_have_distinct_points():
    rng = random.Random(301)
    gw = ecc.generate_keypair(CURVE, rng)
    store = CredentialStore(CURVE, gw.public, lifetime=1000)
    pubs = {store.issue_credentials(n, 0, rng).public for n in range(100)}
    assert len(pubs) == 100


def test_thousand_random_values_roundtrip_and_verify(setup):
    gw, _, cred = setup
    rng = random.Random(310)
    ok = 0
    for i in range(1000):
        value = rng.randint(0, MAX_READING)
        pkt = CipherPacket.decode(privacy.protect_reading(cred, value, seq=i, tick=1, rng=rng).encode(CURVE), CURVE)
        ok += privacy.verify_packet(pkt, CURVE, cred.public) and privacy.open_reading(pkt, gw, cred.public).value == value
    assert ok == 1000
