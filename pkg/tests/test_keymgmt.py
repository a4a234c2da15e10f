import random

import pytest

from sdiot import ecc, southbound
from sdiot.errors import KeyRevokedError
from sdiot.keymgmt import KeyManager, KeyState, unwrap_secret

CURVE = ecc.P192


@pytest.fixture()
def km():
    return KeyManager(CURVE, random.Random(3), lifetime=1000)


def test_distinct_keys_and_epochs(km):
    pubs = {km.generate_keypair_for(n)[0].public for n in range(3, 103)}
    assert len(pubs) == 100
    e1, _ = km.generate_keypair_for(3, tick=5)
    assert e1.epoch == 2
    assert km.history[-1].state is KeyState.REVOKED and km.history[-1].epoch == 1
    assert km.previous_publics(3) == [km.history[-1].public]


def test_renewal_due_at_fraction_of_lifetime(km):
    km.generate_keypair_for(4, tick=200)
    assert km.renewal_due(4) == 200 + 800
    assert km.entries[4].expires_at == 1200


def test_gateway_key_is_ecdh(km):
    entry, kp = km.generate_keypair_for(4)
    assert km.gateway_key(4) == ecc.derive_shared(CURVE, kp.secret, km.gateway.public).key


def test_wrap_unwrap_roundtrip_hides_secret(km):
    boot = ecc.generate_keypair(CURVE, random.Random(8))
    _, kp = km.generate_keypair_for(6)
    wrapped = km.wrap_for(kp, boot.public)
    assert kp.secret.to_bytes(CURVE.scalar_len, "big") != wrapped
    got = unwrap_secret(CURVE, boot, km.gateway.public, wrapped)
    assert got.secret == kp.secret and got.public == kp.public
    other = ecc.generate_keypair(CURVE, random.Random(9))
    assert unwrap_secret(CURVE, other, km.gateway.public, wrapped).secret != kp.secret


def test_establish_pairwise_records_only_publics(km):
    _, a = km.generate_keypair_for(3)
    _, b = km.generate_keypair_for(4)
    k = km.establish_pairwise(a, 3, b, 4)
    assert km.entries[3].pairwise[4] == km.entries[4].pairwise[3] == k
    t = km.transcripts[-1]
    for secret in (a.secret, b.secret):
        blob = secret.to_bytes(CURVE.scalar_len, "big")
        assert blob not in t.a_public + t.b_public
    km.revoke([4])
    with pytest.raises(KeyRevokedError):
        km.establish_pairwise(a, 3, b, 4)


def test_revoke_is_one_message_and_blocks_rejoin(km):
    for n in (3, 4, 5):
        km.generate_keypair_for(n)
    r = km.revoke([3, 4, 3], reason="test", tick=9)
    assert r.nodes == (3, 4)
    assert southbound.decode(r.wire) == southbound.Revoke((3, 4))
    assert not km.is_live(3) and km.is_live(5)
    assert km.entries[3].pairwise == {}
    with pytest.raises(KeyRevokedError):
        km.gateway_key(3)
    with pytest.raises(KeyRevokedError):
        km.generate_keypair_for(3)
    km.allow_rejoin(3)
    assert km.generate_keypair_for(3, tick=10)[0].epoch == 2
    assert km.revoke([]).message is None


def test_revoking_five_puts_five_entries_on_the_wire(km):
    for n in range(3, 10):
        km.generate_keypair_for(n)
    r = km.revoke([3, 4, 5, 6, 7])
    msg = southbound.decode(r.wire)
    assert msg.nodes == (3, 4, 5, 6, 7)
    assert int.from_bytes(r.wire[4:6], "big") == 5 and len(r.wire) == 4 + 2 + 5 * 4
