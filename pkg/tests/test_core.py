"""Message terms, signing, containment, and the authenticated broadcast filter."""

import itertools
import random

import pytest

from permissim.core import (
    ALL_MESSAGES,
    EMPTY_PERMISSION,
    FiniteMessages,
    GENERAL,
    Identifier,
    Message,
    SignedPairIndex,
    authenticated_filter,
    base_value_message,
    contains_signed_pair,
    decode_message,
    sign,
    signed_pairs,
    step,
)
from permissim.protocols.simple import build_idle

from test_codec import random_message

U1 = Identifier("u1")
U2 = Identifier("u2")
U3 = Identifier("u3")


def test_sign_appends_signature():
    m = sign(base_value_message(0), U1)
    assert m.signers == (GENERAL, U1)
    assert m.payload == 0


def test_sign_base_case_depth_one():
    m = sign(Message("raw"), U1)
    assert m.signers == (U1,)
    assert list(signed_pairs(m)) == [(U1, Message("raw"))]


def test_decode_roundtrip_1000_random_messages():
    rng = random.Random(11)
    for _ in range(1000):
        m = random_message(rng)
        signed = sign(m, Identifier(f"w{rng.randrange(3)}"))
        back = decode_message(signed.encode())
        assert back == signed
        assert back.signers == signed.signers
        assert back.timestamp == signed.timestamp
        assert back.payload == signed.payload


def test_contains_direct_nesting():
    base = base_value_message(0)
    m = sign(sign(base, U1), U2)
    assert contains_signed_pair(m, U1, base)
    assert contains_signed_pair(m, U2, sign(base, U1))
    assert not contains_signed_pair(m, U2, base)


def test_contains_nothing_in_flat_message():
    base = base_value_message(0)
    assert not contains_signed_pair(base, U1, Message(0))
    assert not contains_signed_pair(base, U1, base)


def test_contains_agrees_with_substring_oracle():
    # structural containment must equal byte-substring search on encodings
    rng = random.Random(23)
    idents = [Identifier(f"u{i}") for i in range(3)]
    for _ in range(1000):
        m = random_message(rng)
        for _ in range(rng.randrange(1, 4)):
            m = sign(m, rng.choice(idents))
        if rng.random() < 0.5 and m.signers:
            # positive case: pick an actual subterm
            i = rng.randrange(len(m.signers))
            ident = m.signers[i]
            inner = Message(m.payload, m.signers[:i], m.timestamp)
        else:
            ident = rng.choice(idents)
            inner = random_message(rng)
        structural = contains_signed_pair(m, ident, inner)
        substring = sign(inner, ident).encode() in m.encode()
        assert structural == substring


def test_filter_blocks_forged_relay():
    # a processor may not rebroadcast a signature chain it never saw
    base = base_value_message(0)
    forged = sign(base, U1)
    me = U2
    assert not authenticated_filter(me, forged, received=[], permitted=ALL_MESSAGES)
    # once the pair arrives inside some received message, it passes
    assert authenticated_filter(me, forged, received=[forged], permitted=ALL_MESSAGES)


def test_filter_allows_own_signature():
    m = sign(base_value_message(1), U1)
    # (GENERAL, base) is inside m, so it must have been received too
    assert authenticated_filter(
        U1, m, received=[base_value_message(1)], permitted=FiniteMessages([m])
    )
    assert not authenticated_filter(U1, m, received=[], permitted=EMPTY_PERMISSION)


def _brute_force_filter(me, message, received, permitted) -> bool:
    if not permitted.contains(message):
        return False
    for ident, inner in signed_pairs(message):
        if ident == me:
            continue
        pair = sign(inner, ident).encode()
        if not any(pair in r.encode() for r in received):
            return False
    return True


def test_filter_matches_brute_force_on_all_shallow_chains():
    # every signature chain of depth <= 3 over three identifiers
    idents = [U1, U2, U3]
    chains = [()]
    for depth in range(1, 4):
        chains += list(itertools.product(idents, repeat=depth))
    messages = [Message(0, signers) for signers in chains]
    received_options = [[]] + [[r] for r in messages]
    for me in idents:
        for m in messages:
            for received in received_options:
                expect = _brute_force_filter(me, m, received, ALL_MESSAGES)
                got = authenticated_filter(me, m, received, ALL_MESSAGES)
                assert got == expect, (me, m, received)
                index = SignedPairIndex()
                for r in received:
                    index.add(r)
                assert index.filter_ok(me, m) == expect, (me, m, received)


def test_step_idle_is_quiescent():
    instance = build_idle(n=2)
    spec = instance.processors["p0"]
    state = spec.init(())
    out, reqs, nxt = step(spec, state, frozenset(), EMPTY_PERMISSION)
    assert out == frozenset() and reqs == frozenset()
    assert nxt == state


def test_step_is_deterministic():
    from permissim.protocols.simple import build_echo_or

    instance = build_echo_or()
    spec = instance.processors["p0"]
    rng = random.Random(5)
    vote_pool = [Message(("vote", "src2", b)) for b in (0, 1)] + [
        Message(("vote", "src3", b)) for b in (0, 1)
    ]
    state = spec.init(())
    for _ in range(100):
        received = frozenset(rng.sample(vote_pool, rng.randrange(len(vote_pool))))
        a = step(spec, state, received, EMPTY_PERMISSION)
        b = step(spec, state, received, EMPTY_PERMISSION)
        assert a == b
        state = a[2]
