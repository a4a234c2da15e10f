"""Acceptance criteria 1-10, one PASS/FAIL line each."""
import dataclasses
import hashlib
import itertools
import random
import time

import pytest

from sdiot import ecc, privacy
from sdiot.abac import AND, ATLEAST, OR, Leaf, evaluate
from sdiot.authn import BROKER, AuthBroker, Role, SessionState, make_proof
from sdiot.ecc import INFINITY, TOY, CurvePoint
from sdiot.scenarios import load_library, matrix_suite, run_scenario, write_outputs
from sdiot.trust import PRIOR, NeighborWeights, TrustState, TrustStore, record_encounter, weighted_trust

LIB = load_library()
W = 100
GRIDS: dict[str, str] = {}  # criterion 8's grid, reused by the determinism check


@pytest.fixture()
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


# -- shared oracle: toy group by repeated addition

def _add(P, Q, p=TOY.p, a=TOY.a):
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


def _multiples():
    out, acc = [None], None
    for _ in range(TOY.n):
        acc = _add(acc, (TOY.gx, TOY.gy))
        out.append(acc)
    return out


MULT = _multiples()


def _pt(t):
    return INFINITY if t is None else CurvePoint(*t)


def test_criterion_1_ecdh_correctness(verdict):
    rng = random.Random(1)
    t0 = time.perf_counter()
    agree = 0
    for _ in range(1000):
        a, b = ecc.generate_keypair(TOY, rng), ecc.generate_keypair(TOY, rng)
        sa = ecc.derive_shared(TOY, a.secret, b.public)
        sb = ecc.derive_shared(TOY, b.secret, a.public)
        want = _pt(MULT[a.secret * b.secret % TOY.n])
        agree += sa.point == sb.point == want and sa.key == sb.key == hashlib.sha256(bytes([want.x])).digest()
    elapsed = time.perf_counter() - t0
    verdict(1, agree == 1000 and elapsed < 5, f"{agree}/1000 agreements match the oracle in {elapsed:.2f}s")


def test_criterion_2_group_law(verdict):
    bad = []
    for k in range(TOY.n + 1):
        got = ecc.scalar_mul(TOY, k, TOY.G)
        on_curve = got == INFINITY or (got.y ** 2 - got.x ** 3 - TOY.a * got.x - TOY.b) % TOY.p == 0
        if got != _pt(MULT[k]) or not on_curve:
            bad.append(k)
    verdict(2, not bad, f"k=0..{TOY.n}: {TOY.n + 1 - len(bad)} exact matches, mismatches {bad or 'none'}")


def test_criterion_3_smc_soundness(verdict):
    rng = random.Random(3)
    exact = 0
    for _ in range(1000):
        values = [rng.randint(0, privacy.MAX_READING) for _ in range(rng.randint(1, 50))]
        m = rng.randint(2, 5)
        sets = [privacy.smc_split(v, m, rng=rng, owner=i) for i, v in enumerate(values)]
        subtotals = privacy.aggregator_subtotals(sets, m)
        exact += privacy.smc_combine(subtotals, privacy.SMC_MODULUS, "sum", len(values)).value == sum(values)
    completions = 0
    for case in range(100):
        m = 2 + case % 4
        shares = privacy.smc_split(rng.randint(0, privacy.MAX_READING), m, rng=rng).shares
        for drop in range(m):
            partial = shares[:drop] + shares[drop + 1:]
            ok = True
            for _ in range(5):
                candidate = rng.randrange(privacy.SMC_MODULUS)
                last = privacy.complete_share(partial, candidate)
                ok &= 0 <= last < privacy.SMC_MODULUS and (sum(partial) + last) % privacy.SMC_MODULUS == candidate
            completions += ok
    total = sum(2 + c % 4 for c in range(100))
    verdict(3, exact == 1000 and completions == total,
            f"{exact}/1000 aggregates exact, {completions}/{total} (m-1)-subsets complete to random candidates")


def test_criterion_4_trust_formulas(verdict):
    def run(outcomes, alpha):
        s, out = TrustState(1, 2), []
        for o in outcomes:
            s = record_encounter(s, o, alpha)
            out.append(s.reputation)
        return out

    hand = [(run([1, 0, 1], 0.5), [0.75, 0.375, 0.6875]), (run([1, 1, 1, 1], 0.5), [0.75, 0.875, 0.9375, 0.96875]),
            (run([0, 0, 1], 0.1), [0.45, 0.405, 0.4645])]
    ewma_ok = all(abs(g - w) <= 1e-12 for got, want in hand for g, w in zip(got, want))

    states = {3: TrustState(3, 9, 0.8), 4: TrustState(4, 9, 0.2), 5: TrustState(5, 9, 0.65)}
    weights = NeighborWeights(((3, 2.0), (4, 1.0), (5, 1.0)))
    direct = (2.0 * 0.8 + 1.0 * 0.2 + 1.0 * 0.65) / 4.0
    weighted_ok = abs(weighted_trust(9, weights, states) - direct) <= 1e-12

    # 10^6 encounters over 1000 random streams; each step is also checked against the unclamped update
    rng = random.Random(4)
    in_range, worst = True, 0.0
    for _ in range(1000):
        alpha = rng.uniform(1e-6, 1.0)
        s, ref = TrustState(1, 2), PRIOR
        for _ in range(1000):
            o = rng.getrandbits(1)
            s = record_encounter(s, o, alpha)
            ref = (1 - alpha) * ref + alpha * o
            in_range &= 0.0 <= s.reputation <= 1.0
            worst = max(worst, abs(s.reputation - ref))
    verdict(4, ewma_ok and weighted_ok and in_range and worst <= 1e-12,
            f"EWMA hand values {'match' if ewma_ok else 'DIFFER'}, weighted trust "
            f"{'matches' if weighted_ok else 'DIFFERS'}, R in [0,1] over 10^6 encounters: {in_range} "
            f"(max drift from unclamped update {worst:.1e})")


def _separation(seed):
    rng = random.Random(seed)
    observers = [1, 2]
    store = TrustStore(alpha=0.1, tau=0.7, neighbors_of=lambda n: observers)
    coop = {10: 0.95, 11: 0.20}
    for i in range(200):
        for node, p in coop.items():
            store.record(observers[i % 2], node, int(rng.random() < p))
    return store.node_trust(10), store.node_trust(11)


def test_criterion_5_trust_separation(verdict):
    honest, bad = _separation(5)
    again = _separation(5)
    defect = run_scenario(dataclasses.replace(LIB["defect"], duration=4200))
    scen = dict(defect.node_trust)
    defector = LIB["defect"].attacks[0]["node"]
    others = [v for n, v in scen.items() if n != defector]
    scen_ok = min(others) > 0.7 > scen[defector]
    verdict(5, honest > 0.7 > bad and again == (honest, bad) and scen_ok,
            f"honest {honest:.4f} > 0.7 > malicious {bad:.4f}, rerun identical: {again == (honest, bad)}; "
            f"simulated defector {scen[defector]:.4f}, lowest honest {min(others):.4f}")


# -- criterion 6: exhaustive access trees

NAMES = ("a", "b", "c")
ENVS = [dict(zip(NAMES, bits)) for bits in itertools.product((0, 1), repeat=3)]


def _table(masks, k):
    """Truth table (bit i = assignment i) of 'at least k of these children hold'."""
    return sum(1 << i for i in range(len(ENVS)) if sum((m >> i) & 1 for m in masks) >= k)


def _trees(depth):
    """Every tree with at most ``depth`` levels, children as multisets of size 2 or 3.

    Gates: AND and OR over 2 or 3 children, and the 2-of-3 threshold (the
    other thresholds coincide with AND or OR).
    """
    leaves = [(Leaf(n, "=", 1), _table([sum(1 << i for i, e in enumerate(ENVS) if e[n])], 1)) for n in NAMES]
    level = leaves
    for _ in range(depth - 1):
        nxt = list(leaves)
        for size in (2, 3):
            for kids in itertools.combinations_with_replacement(level, size):
                trees, masks = [t for t, _ in kids], [m for _, m in kids]
                nxt.append((AND(*trees), _table(masks, size)))
                nxt.append((OR(*trees), _table(masks, 1)))
                if size == 3:
                    nxt.append((ATLEAST(2, *trees), _table(masks, 2)))
        level = nxt
    return level


def test_criterion_6_abac_equivalence(verdict):
    t0 = time.perf_counter()
    trees = _trees(3)
    wrong = sum(evaluate(tree, env) != bool((mask >> i) & 1)
                for tree, mask in trees for i, env in enumerate(ENVS))
    elapsed = time.perf_counter() - t0
    verdict(6, wrong == 0 and elapsed < 10,
            f"{len(trees)} trees x 8 assignments, {wrong} disagreements, {elapsed:.2f}s")


# -- criterion 7: authentication negatives

KEY = bytes(range(32))


def _broker(seed):
    b = AuthBroker(random.Random(seed))
    b.register_principal(5, KEY)
    return b


def test_criterion_7_auth_negatives(verdict):
    rng = random.Random(7)
    mutual = 0
    for i in range(1000):
        b = _broker(i)
        wrong = rng.getrandbits(256).to_bytes(32, "big")
        s = b.begin(BROKER, 5, 0)
        proof, nonce_r = b.respond(s, wrong)
        b.verify(s.session_id, proof, Role.RESPONDER)
        mutual += b.verify(s.session_id, make_proof(wrong, nonce_r, BROKER), Role.INITIATOR) is SessionState.MUTUAL

    flips = 0
    good = None
    for bit in range(256):
        b = _broker(10_000)
        s = b.begin(BROKER, 5, 0)
        proof, nonce_r = b.respond(s, KEY)
        assert b.verify(s.session_id, proof, Role.RESPONDER) is SessionState.HALF
        good = make_proof(KEY, nonce_r, BROKER)
        bad = bytearray(good)
        bad[bit // 8] ^= 1 << (bit % 8)
        mutual += b.verify(s.session_id, bytes(bad), Role.INITIATOR) is SessionState.MUTUAL
        flips += 1

    b = _broker(20_000)
    first = b.begin(5, BROKER, 0, nonce=b"r" * 16)
    replayed = b.begin(5, BROKER, 1, nonce=b"r" * 16)
    s = b.begin(BROKER, 5, 2)
    b.attach_counter_nonce(first, b"q" * 16)
    counter_replay = not b.attach_counter_nonce(s, b"q" * 16)
    replay_ok = first.state is SessionState.ISSUED and replayed.state is SessionState.FAILED and counter_replay
    verdict(7, mutual == 0 and flips == 256 and replay_ok,
            f"1000 wrong-key attempts + {flips} single-bit flips: {mutual} mutual; nonce replays rejected: {replay_ok}")


def test_criterion_8_coverage_matrix(verdict, tmp_path):
    t0 = time.perf_counter()
    report = matrix_suite(out_dir=tmp_path)
    elapsed = time.perf_counter() - t0
    GRIDS["first"] = report.to_text()
    passed = sum(r.passed for r in report.results)
    failing = [f"{r.cell.threat}/{r.cell.module}: {r.reason}" for r in report.results if not r.passed]
    verdict(8, report.ok and elapsed < 120,
            f"{passed}/{len(report.results)} checked cells pass in {elapsed:.1f}s"
            + (f"; failing {failing}" if failing else ""))


def test_criterion_9_mitigation_calibration(verdict):
    clean = LIB["clean"]
    d = clean.detector
    spec = dataclasses.replace(clean, duration=(d.baseline_learning_windows + 100) * d.window)
    baseline = run_scenario(spec)
    dos = run_scenario(LIB["dos"])
    o = dos.outcome_of("flood")
    flood = LIB["dos"].attacks[0]
    ok = (baseline.alerts == [] and o.outcome == "detected" and o.latency <= 2 * W
          and o.post_countermeasure_delivered == 0 and flood["multiplier"] == 50.0)
    verdict(9, ok, f"{len(baseline.alerts)} alerts over 100 baseline windows; 50x flood {o.label()} "
                   f"(limit {2 * W}), post-countermeasure deliveries {o.post_countermeasure_delivered}")


def test_criterion_10_determinism(verdict, tmp_path):
    same = True
    for name in ("attack_mix", "defect", "rogue_join_copy"):
        a = write_outputs(run_scenario(LIB[name]), tmp_path / name / "a")
        b = write_outputs(run_scenario(LIB[name]), tmp_path / name / "b")
        same &= all((a / f).read_bytes() == (b / f).read_bytes() for f in ("report.txt", "report.kv", "audit.log"))
    first = GRIDS.get("first") or matrix_suite().to_text()
    grid_same = matrix_suite().to_text() == first
    verdict(10, same and grid_same,
            f"reruns of attack_mix, defect and rogue_join_copy byte-identical: {same}; matrix grid identical: {grid_same}")
