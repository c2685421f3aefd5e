"""Permitter oracles: grant laws, randomness modes, and balance discipline."""

import math
import random

import pytest

from permissim.chains import GENESIS_ID, Block, block_message
from permissim.core import EMPTY_PERMISSION, Identifier, Message, Request
from permissim.permitters import (
    GrantAllIfFunded,
    PermissionedPermitter,
    PosLeaderPermitter,
    PowPermitter,
    ThresholdVotePermitter,
    UniversalSeedPermitter,
    VoteMintPermitter,
    success_probability,
    weighted_choice,
)
from permissim.resources import ConstantPool

A = Identifier("a")
B = Identifier("b")


def _random_request(rng: random.Random, timed: bool) -> Request:
    slot = rng.randrange(0, 6) if timed else None
    extras = [
        None,
        ("vote", f"p{rng.randrange(3)}", rng.randrange(2)),
        ("block", GENESIS_ID, f"m{rng.randrange(3)}", rng.randrange(4)),
        ("junk",),
    ]
    return Request(slot, (), rng.choice(extras))


def test_no_balance_no_voice_fuzz():
    # every permissionless oracle answers a zero-balance query with nothing
    oracles = [
        GrantAllIfFunded(),
        UniversalSeedPermitter(),
        VoteMintPermitter(),
        ThresholdVotePermitter(rate=5.0),
        PowPermitter(rate=5.0),
        PosLeaderPermitter(ConstantPool({A: 1.0})),
    ]
    rng = random.Random(2)
    for i in range(10_000):
        oracle = oracles[i % len(oracles)]
        timed = isinstance(oracle, PosLeaderPermitter)
        req = _random_request(rng, timed)
        resp = oracle.respond(rng.randrange(100), "p0", A, rng.randrange(1, 9), req, 0.0)
        assert resp.permission is EMPTY_PERMISSION, (oracle.name, req)


def test_permissioned_always_grants_everything():
    oracle = PermissionedPermitter()
    base = Message(0)
    for req in (Request(None), Request(None, (), ("anything",))):
        resp = oracle.respond(0, "p0", A, 1, req, 0.0)
        assert resp.permission.contains(base)
    r1 = oracle.respond(0, "p0", A, 1, Request(None), 0.0)
    r2 = oracle.respond(7, "p9", B, 5, Request(None, (), "x"), 3.0)
    assert r1.permission.descriptor() == r2.permission.descriptor()


def test_pow_monte_carlo_matches_closed_form():
    rate, balance = 0.1, 5.0
    oracle = PowPermitter(rate=rate)
    req = Request(None, (), ("block", GENESIS_ID, "m0", 0))
    hits = 0
    n = 100_000
    for s in range(n):
        resp = oracle.respond(s, "m0", A, 1, req, balance)
        hits += resp.permission is not EMPTY_PERMISSION
    expect = 1.0 - math.exp(-rate * balance)
    assert abs(hits / n - expect) < 0.01
    assert success_probability(rate, balance) == pytest.approx(expect)


def test_pow_rejects_stale_parent():
    oracle = PowPermitter(rate=100.0)
    blk = Block(parent=GENESIS_ID, producer="m0", slot=None, data=0)
    tip_msgs = frozenset([block_message(blk)])
    # request citing the chain but extending genesis instead of the tip
    req = Request(None, tip_msgs, ("block", GENESIS_ID, "m0", 1))
    resp = oracle.respond(0, "m0", A, 1, req, 10.0)
    assert resp.permission is EMPTY_PERMISSION
    assert resp.diagnostic == "parent is not a longest-chain tip"
    good = Request(None, tip_msgs, ("block", blk.id, "m0", 1))
    assert oracle.respond(0, "m0", A, 1, good, 10.0).permission is not EMPTY_PERMISSION


def test_pow_malformed_candidate_diagnostic():
    oracle = PowPermitter(rate=100.0)
    resp = oracle.respond(0, "m0", A, 1, Request(None, (), ("what",)), 1.0)
    assert resp.permission is EMPTY_PERMISSION
    assert resp.diagnostic == "malformed block request"


def test_pos_leader_frequencies_match_stakes():
    pool = ConstantPool({A: 3.0, B: 1.0})
    oracle = PosLeaderPermitter(pool)
    req = Request(2, (), None)
    wins = {A: 0, B: 0}
    n = 10_000
    for s in range(n):
        for ident, pid in ((A, "pa"), (B, "pb")):
            resp = oracle.respond(s, pid, ident, 1, req, pool.balance(ident, 2, frozenset()))
            if resp.permission is not EMPTY_PERMISSION:
                wins[ident] += 1
    assert wins[A] + wins[B] == n  # exactly one leader per run
    assert abs(wins[A] / n - 0.75) < 0.02
    assert abs(wins[B] / n - 0.25) < 0.02


def test_pos_leader_fixed_within_run():
    pool = ConstantPool({A: 3.0, B: 1.0})
    oracle = PosLeaderPermitter(pool)
    req = Request(2, (), None)
    for s in (0, 1, 17):
        first = oracle.respond(s, "pa", A, 1, req, 3.0)
        again = oracle.respond(s, "pa", A, 4, req, 3.0)
        assert first.permission.descriptor() == again.permission.descriptor()


def test_pos_leader_scaling_invariance():
    # scaling all stakes by a positive constant never changes the leader
    base = ConstantPool({A: 3.0, B: 1.0})
    scaled = ConstantPool({A: 7.5, B: 2.5})
    o1, o2 = PosLeaderPermitter(base), PosLeaderPermitter(scaled)
    req = Request(2, (), None)
    for s in range(10_000):
        l1 = o1.respond(s, "pa", A, 1, req, 3.0).permission is not EMPTY_PERMISSION
        l2 = o2.respond(s, "pa", A, 1, req, 7.5).permission is not EMPTY_PERMISSION
        assert l1 == l2


def test_pos_leader_bad_slot_diagnostics():
    pool = ConstantPool({A: 1.0})
    oracle = PosLeaderPermitter(pool)
    resp = oracle.respond(0, "pa", A, 1, Request(None, (), None), 1.0)
    assert resp.diagnostic == "request missing slot"
    blk = Block(parent=GENESIS_ID, producer="a", slot=3, data=0)
    chain = frozenset([block_message(blk, timed=True)])
    resp = oracle.respond(0, "pa", A, 1, Request(2, chain, None), 1.0)
    assert resp.diagnostic == "slot does not extend the chain"


def test_vote_mint_grants_exactly_the_named_vote():
    oracle = VoteMintPermitter()
    resp = oracle.respond(0, "p0", A, 1, Request(None, (), ("vote", "src2", 1)), 1.0)
    assert resp.permission.contains(Message(("vote", "src2", 1)))
    assert not resp.permission.contains(Message(("vote", "src2", 0)))
    bad = oracle.respond(0, "p0", A, 1, Request(None, (), ("vote", "src2", 7)), 1.0)
    assert bad.permission is EMPTY_PERMISSION


def test_universal_seed_only_answers_the_seed_request():
    oracle = UniversalSeedPermitter()
    seed_req = Request(0, (), None)
    assert oracle.respond(0, "p0", A, 1, seed_req, 1.0).permission.contains(Message(1))
    other = oracle.respond(0, "p0", A, 1, Request(3, (), None), 1.0)
    assert other.permission is EMPTY_PERMISSION


def test_threshold_vote_is_per_query_independent():
    oracle = ThresholdVotePermitter(rate=0.7)
    req = Request(None, (), ("vote", "src", 1))
    # same seed, different slots: outcomes vary; same slot: stable
    outcomes = {
        t: oracle.respond(5, "p0", A, t, req, 1.0).permission is not EMPTY_PERMISSION
        for t in range(1, 40)
    }
    assert len(set(outcomes.values())) == 2
    for t in (1, 7, 20):
        again = oracle.respond(5, "p0", A, t, req, 1.0).permission is not EMPTY_PERMISSION
        assert again == outcomes[t]


def test_weighted_choice_edge_cases():
    assert weighted_choice({}, 0.5) is None
    assert weighted_choice({A: 0.0}, 0.5) is None
    assert weighted_choice({A: 2.0}, 0.999999) == A
    # deterministic split point at the normalized boundary
    support = {A: 1.0, B: 3.0}
    assert weighted_choice(support, 0.24) == A
    assert weighted_choice(support, 0.26) == B
