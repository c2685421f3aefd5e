"""Pools, balance accounting, q-bounded adversaries, and regime windows."""

import random

import pytest

from permissim.core import Identifier, Message
from permissim.resources import (
    ConstantPool,
    NetworkRegime,
    PoolViolation,
    SettingFlags,
    TablePool,
    check_disjoint_supports,
    check_identifier_fraction,
    check_q_bounded,
    total_balance,
    validate_pool,
)

U0, U1, U2 = Identifier("u0"), Identifier("u1"), Identifier("u2")


def test_total_balance_two_equal_constants():
    # two identifiers at the same constant I, rest zero: total is 2I everywhere
    I = 3.5
    pool = ConstantPool({U0: I, U1: I})
    for t in (1, 5, 40):
        assert total_balance(pool, t, frozenset()) == 2 * I
    assert total_balance(ConstantPool({U0: I}), 1, frozenset()) == I


def test_total_balance_matches_table_iteration():
    rng = random.Random(3)
    idents = [Identifier(f"r{i}") for i in range(5)]
    rows = {
        t: {u: rng.uniform(0.1, 9.0) for u in idents}
        for t in range(1, 6)
    }
    pool = TablePool(rows)
    for t in range(1, 6):
        assert total_balance(pool, t, frozenset()) == pytest.approx(sum(rows[t].values()))


def test_total_balance_zero_is_a_violation():
    pool = TablePool({1: {U0: 1.0}})  # slot 2 falls back to an empty default
    with pytest.raises(PoolViolation):
        total_balance(pool, 2, frozenset())


def test_q_bounded_equal_pair_with_silent_third():
    # one of two equal balance holders stays within q=1/2 but not q=0.4
    pool = ConstantPool({U0: 1.0, U1: 1.0})
    domain = [(t, frozenset()) for t in range(1, 4)]
    ok, _ = check_q_bounded(pool, [U0], 0.5, domain)
    assert ok
    ok, witness = check_q_bounded(pool, [U0], 0.4, domain)
    assert not ok and witness[0] == 1


def test_q_bounded_empty_adversary():
    pool = ConstantPool({U0: 2.0})
    ok, _ = check_q_bounded(pool, [], 0.0, [(1, frozenset())])
    assert ok


def test_q_bounded_matches_exhaustive_fraction_check():
    rng = random.Random(9)
    idents = [Identifier(f"q{i}") for i in range(4)]
    for trial in range(50):
        rows = {
            t: {u: rng.choice([0.0, rng.uniform(0.5, 4.0)]) for u in idents}
            for t in range(1, 5)
        }
        rows = {
            t: (row if sum(row.values()) > 0 else {idents[0]: 1.0})
            for t, row in rows.items()
        }
        pool = TablePool(rows)
        adv = rng.sample(idents, rng.randrange(len(idents) + 1))
        q = rng.random()
        domain = [(t, frozenset()) for t in range(1, 5)]
        expect = all(
            sum(rows[t].get(u, 0.0) for u in adv)
            <= q * sum(rows[t].values()) + 1e-12
            for t in range(1, 5)
        )
        assert check_q_bounded(pool, adv, q, domain)[0] == expect


def test_disjoint_supports_by_construction():
    # identifier u_t funded only at slot t: supports never intersect
    idents = {t: Identifier(f"slotted{t}") for t in range(1, 5)}
    pool = TablePool({t: {idents[t]: 1.0} for t in range(1, 5)})
    ok, _ = check_disjoint_supports(pool, [(t, frozenset()) for t in range(1, 5)])
    assert ok


def test_disjoint_supports_fails_for_constant_pool():
    pool = ConstantPool({U0: 1.0})
    ok, witness = check_disjoint_supports(pool, [(t, frozenset()) for t in (1, 2)])
    assert not ok
    assert witness == (1, 2, "u0")


def test_disjoint_supports_matches_pairwise_oracle():
    rng = random.Random(17)
    idents = [Identifier(f"d{i}") for i in range(6)]
    for trial in range(40):
        rows = {
            t: {u: 1.0 for u in rng.sample(idents, rng.randrange(1, 4))}
            for t in range(1, 5)
        }
        pool = TablePool(rows)
        domain = [(t, frozenset()) for t in range(1, 5)]
        supports = {t: {u for u, b in rows[t].items() if b > 0} for t in range(1, 5)}
        expect = all(
            not (supports[a] & supports[b])
            for a in range(1, 5)
            for b in range(a + 1, 5)
        )
        assert check_disjoint_supports(pool, domain)[0] == expect


def test_identifier_fraction_bound():
    pool = ConstantPool({U0: 3.0, U1: 1.0})
    ok, _ = check_identifier_fraction(pool, 0.75, [(1, frozenset())])
    assert ok
    ok, witness = check_identifier_fraction(pool, 0.5, [(1, frozenset())])
    assert not ok and witness[1] == "u0"


def test_validate_pool_rejects_unowned_balance():
    pool = ConstantPool({U0: 1.0, U2: 1.0})
    with pytest.raises(PoolViolation):
        validate_pool(pool, owned=[U0, U1])
    validate_pool(pool, owned=[U0, U2])


def test_validate_pool_alpha_bounds():
    pool = ConstantPool({U0: 5.0})
    validate_pool(pool, owned=[U0], alpha=(1.0, 10.0))
    with pytest.raises(PoolViolation):
        validate_pool(pool, owned=[U0], alpha=(6.0, 10.0))


def test_synchronous_window():
    regime = NetworkRegime("synchronous", 2)
    assert regime.window_ok(3, 5)
    assert not regime.window_ok(3, 6)
    assert not regime.window_ok(3, 3)  # strictly after broadcast


def test_partial_synchrony_window():
    regime = NetworkRegime("partial", 1, stabilization=10)
    # before stabilization, anything up to stabilization + delta is allowed
    assert regime.window_ok(4, 9)
    assert regime.window_ok(4, 11)
    assert not regime.window_ok(4, 12)
    # after stabilization the synchronous bound applies
    assert not regime.window_ok(12, 15)
    assert regime.window_ok(12, 13)


def test_unsized_setting_requires_positive_alpha():
    regime = NetworkRegime("synchronous", 1)
    with pytest.raises(ValueError):
        SettingFlags(
            timed=False, sized=False, single_permitter=True,
            authenticated=False, regime=regime,
        )
    with pytest.raises(ValueError):
        SettingFlags(
            timed=False, sized=False, single_permitter=True,
            authenticated=False, regime=regime, alpha=(0.0, 2.0),
        )
    flags = SettingFlags(
        timed=False, sized=False, single_permitter=True,
        authenticated=False, regime=regime, alpha=(0.5, 2.0),
    )
    assert flags.alpha == (0.5, 2.0)
