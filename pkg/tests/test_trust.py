import math

import pytest
from hypothesis import given, strategies as st

from sdiot.errors import TrustError
from sdiot.trust import (PRIOR, NeighborWeights, TrustState, TrustStore, record_encounter, weighted_trust)


def _run(outcomes, alpha):
    s = TrustState(1, 2)
    out = []
    for o in outcomes:
        s = record_encounter(s, o, alpha)
        out.append(s.reputation)
    return out


def test_ewma_hand_iterated():
    assert _run([1, 0, 1], 0.5) == pytest.approx([0.75, 0.375, 0.6875], abs=1e-12)
    assert _run([1, 1, 1, 1], 0.5)[-1] == pytest.approx(0.96875, abs=1e-12)
    assert _run([0], 0.1)[-1] == pytest.approx(0.45, abs=1e-12)


def test_weighted_trust_direct_sum():
    states = {3: TrustState(3, 9, 0.8), 4: TrustState(4, 9, 0.2)}
    w = NeighborWeights(((3, 0.6), (4, 0.4)))
    assert weighted_trust(9, w, states) == pytest.approx(0.56, abs=1e-12)
    # unnormalised weights are normalised first
    assert weighted_trust(9, NeighborWeights(((3, 3.0), (4, 2.0))), states) == pytest.approx(0.56, abs=1e-12)


@given(st.lists(st.integers(0, 1), max_size=300), st.floats(1e-6, 1.0))
def test_reputation_stays_in_unit_interval(outcomes, alpha):
    for r in _run(outcomes, alpha):
        assert 0.0 <= r <= 1.0


@given(st.lists(st.integers(0, 1), min_size=1, max_size=50), st.floats(0.01, 1.0))
def test_closed_form_matches_iteration(outcomes, alpha):
    n = len(outcomes)
    expect = (1 - alpha) ** n * PRIOR + sum(alpha * (1 - alpha) ** (n - 1 - i) * o for i, o in enumerate(outcomes))
    assert math.isclose(_run(outcomes, alpha)[-1], expect, abs_tol=1e-12)


def test_invalid_inputs():
    with pytest.raises(TrustError):
        record_encounter(TrustState(1, 2), 2)
    with pytest.raises(TrustError):
        record_encounter(TrustState(1, 2), 1, alpha=0.0)
    with pytest.raises(TrustError):
        NeighborWeights(((1, 0.0),)).normalized()
    with pytest.raises(TrustError):
        weighted_trust(9, NeighborWeights(()), {})


def test_store_assessment():
    registered = {3, 4, 5}
    store = TrustStore(alpha=0.5, tau=0.7, neighbors_of=lambda n: sorted(registered - {n}),
                       is_registered=lambda n: n in registered)
    for _ in range(4):
        store.record(4, 3, 1)
        store.record(5, 3, 1)
        store.record(3, 4, 0)
        store.record(5, 4, 0)
    assert store.node_trust(3) == pytest.approx(0.96875)
    a = store.assess_request("client", [3, 4])
    assert not a.allow and a.offending == [4]
    assert store.assess_request("client", [3]).allow
    assert not store.assess_request("client", [3, 8]).allow
    assert [(s.a, s.b) for s in store.table()] == [(3, 4), (4, 3), (5, 3), (5, 4)]
