"""Resource pools and setting flags.

A resource pool assigns every identifier a non-negative balance as a
function of the timeslot and of a message set (the "state" the balance is
judged against: a chain for stake, nothing for fixed hash rate).  Pools
must satisfy three conditions:

(a) only identifiers owned by some processor may carry a non-zero balance,
(b) for each (t, M) only finitely many identifiers have non-zero balance,
(c) for each (t, M) the total balance is strictly positive.

The q-bound on an adversary says that across every (t, M) the balance
controlled by adversarial processors is at most a q fraction of the total.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .core import Identifier, Message


class PoolViolation(Exception):
    """A resource pool broke one of its validity conditions."""


Support = dict[Identifier, float]


class ResourcePool:
    """Base class: balance(U, t, M) plus finite support enumeration."""

    message_dependent: bool = False

    def balance(self, identifier: Identifier, slot: int, messages: frozenset[Message]) -> float:
        raise NotImplementedError

    def support(self, slot: int, messages: frozenset[Message]) -> Support:
        """The finite set of identifiers with non-zero balance at (t, M)."""
        raise NotImplementedError

    def domain(self) -> Iterable[tuple[int, frozenset[Message]]]:
        """A finite validation domain of (t, M) points this pool declares."""
        return [(1, frozenset())]

    def descriptor(self) -> Any:
        raise NotImplementedError


class ConstantPool(ResourcePool):
    """Balances fixed per identifier, independent of slot and messages."""

    def __init__(self, balances: dict[Identifier, float]):
        self.balances = {u: float(b) for u, b in balances.items() if b != 0.0}
        for u, b in self.balances.items():
            if b < 0:
                raise PoolViolation(f"negative balance for {u.name}")

    def balance(self, identifier, slot, messages):
        return self.balances.get(identifier, 0.0)

    def support(self, slot, messages):
        return dict(self.balances)

    def descriptor(self):
        return ["constant", sorted((u.name, b) for u, b in self.balances.items())]


class TablePool(ResourcePool):
    """Balances tabulated by slot, with an optional default row.

    Message-independent; a separate row per slot makes disjoint supports
    (no identifier funded at two distinct slots) easy to arrange.
    """

    def __init__(
        self,
        rows: dict[int, dict[Identifier, float]],
        default: Optional[dict[Identifier, float]] = None,
    ):
        self.rows = {
            t: {u: float(b) for u, b in row.items() if b != 0.0}
            for t, row in rows.items()
        }
        self.default = {u: float(b) for u, b in (default or {}).items() if b != 0.0}

    def balance(self, identifier, slot, messages):
        row = self.rows.get(slot, self.default)
        return row.get(identifier, 0.0)

    def support(self, slot, messages):
        return dict(self.rows.get(slot, self.default))

    def domain(self):
        return [(t, frozenset()) for t in sorted(self.rows)]

    def descriptor(self):
        return [
            "table",
            sorted((t, sorted((u.name, b) for u, b in row.items())) for t, row in self.rows.items()),
            sorted((u.name, b) for u, b in self.default.items()),
        ]


class StakeFromChainPool(ResourcePool):
    """Stake read off a chain: genesis allocation plus a reward per block.

    The message set is interpreted as a chain of block messages; each block
    credits its producer with `reward`.  A message set that is not a chain
    falls back to the genesis allocation, which keeps the pool total.
    """

    message_dependent = True

    def __init__(self, genesis: dict[Identifier, float], reward: float = 0.0):
        self.genesis = {u: float(b) for u, b in genesis.items() if b != 0.0}
        self.reward = float(reward)
        self._by_name = {u.name: u for u in self.genesis}

    def _stakes(self, messages: frozenset[Message]) -> Support:
        stakes = dict(self.genesis)
        if self.reward == 0.0:
            return stakes
        from .chains import blocks_of, chain_from_tip, best_tip

        blocks = blocks_of(messages)
        tip = best_tip(blocks)
        for blk in chain_from_tip(blocks, tip):
            u = self._by_name.get(blk.producer)
            if u is not None:
                stakes[u] = stakes.get(u, 0.0) + self.reward
        return stakes

    def balance(self, identifier, slot, messages):
        return self._stakes(messages).get(identifier, 0.0)

    def support(self, slot, messages):
        return self._stakes(messages)

    def descriptor(self):
        return [
            "stake-from-chain",
            sorted((u.name, b) for u, b in self.genesis.items()),
            self.reward,
        ]


# ---------------------------------------------------------------------------
# Pool checks
# ---------------------------------------------------------------------------


def total_balance(pool: ResourcePool, slot: int, messages: frozenset[Message]) -> float:
    """Sum of all balances at (t, M).  Raises PoolViolation if zero."""
    total = sum(pool.support(slot, messages).values())
    if total <= 0.0:
        raise PoolViolation(f"zero total balance at t={slot}")
    return total


def validate_pool(
    pool: ResourcePool,
    owned: Iterable[Identifier],
    domain: Optional[Iterable[tuple[int, frozenset[Message]]]] = None,
    alpha: Optional[tuple[float, float]] = None,
) -> None:
    """Check conditions (a) and (c) over a finite domain, plus optional
    total-balance bounds for the unsized setting (checked on totals only)."""
    owned_set = set(owned)
    for slot, messages in domain if domain is not None else pool.domain():
        support = pool.support(slot, messages)
        for u, b in support.items():
            if b < 0:
                raise PoolViolation(f"negative balance for {u.name} at t={slot}")
            if b > 0 and u not in owned_set:
                raise PoolViolation(f"unowned identifier {u.name} funded at t={slot}")
        total = sum(support.values())
        if total <= 0.0:
            raise PoolViolation(f"zero total balance at t={slot}")
        if alpha is not None and not (alpha[0] <= total <= alpha[1]):
            raise PoolViolation(
                f"total {total} outside declared bounds {alpha} at t={slot}"
            )


def check_q_bounded(
    pool: ResourcePool,
    adversary_ids: Iterable[Identifier],
    q: float,
    domain: Iterable[tuple[int, frozenset[Message]]],
) -> tuple[bool, Optional[tuple[int, float, float]]]:
    """Is the adversary's balance at most q of the total at every point?

    Returns (ok, witness); the witness names the first violating slot with
    the adversary and total balances there.
    """
    adv = set(adversary_ids)
    for slot, messages in domain:
        support = pool.support(slot, messages)
        total = sum(support.values())
        held = sum(b for u, b in support.items() if u in adv)
        if held > q * total + 1e-12:
            return False, (slot, held, total)
    return True, None


def check_disjoint_supports(
    pool: ResourcePool,
    domain: Iterable[tuple[int, frozenset[Message]]],
) -> tuple[bool, Optional[tuple[int, int, str]]]:
    """Do distinct slots fund disjoint identifier sets across the domain?"""
    seen: dict[Identifier, int] = {}
    for slot, messages in domain:
        for u in pool.support(slot, messages):
            prior = seen.get(u)
            if prior is not None and prior != slot:
                return False, (prior, slot, u.name)
            seen[u] = slot
    return True, None


def check_identifier_fraction(
    pool: ResourcePool,
    q: float,
    domain: Iterable[tuple[int, frozenset[Message]]],
) -> tuple[bool, Optional[tuple[int, str, float]]]:
    """Does no single identifier hold more than a q fraction anywhere?"""
    for slot, messages in domain:
        support = pool.support(slot, messages)
        total = sum(support.values())
        for u, b in support.items():
            if b > q * total + 1e-12:
                return False, (slot, u.name, b / total)
    return True, None


# ---------------------------------------------------------------------------
# Setting flags
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NetworkRegime:
    """Synchronous (delta) or partially synchronous (delta, stabilization).

    Synchronous: a message broadcast at t arrives in (t, t+delta].
    Partially synchronous: that window is only guaranteed from the
    stabilization slot onward; a message broadcast earlier must arrive by
    stabilization + delta (the weakest schedule consistent with eventual
    delivery).
    """

    kind: str  # "synchronous" | "partial"
    delta: int
    stabilization: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("synchronous", "partial"):
            raise ValueError(f"unknown regime {self.kind}")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")
        if self.kind == "partial" and self.stabilization is None:
            raise ValueError("partial synchrony needs a stabilization slot")

    def deadline(self, broadcast_slot: int) -> int:
        if self.kind == "synchronous":
            return broadcast_slot + self.delta
        return max(broadcast_slot, self.stabilization) + self.delta

    def window_ok(self, broadcast_slot: int, receive_slot: int) -> bool:
        return broadcast_slot < receive_slot <= self.deadline(broadcast_slot)

    def descriptor(self) -> Any:
        return [self.kind, self.delta, self.stabilization]


@dataclass(frozen=True)
class SettingFlags:
    """The axes a protocol runs under.

    timed: requests name the slot whose balance backs them, and every
      broadcast message carries the slot whose request earned it.
    sized: protocol code may rely on the pool being known; in the unsized
      setting only total-balance bounds (alpha) are determined and protocol
      state machines never see the pool object.
    single_permitter: at most one request per processor per slot, request
      extras allowed.  multi (the negation) allows many requests but no
      extras.
    authenticated: signing is meaningful and the broadcast filter applies.
    permissioned: every processor is permitted everything from the start
      and the adversary bound counts processors instead of balance.
    """

    timed: bool
    sized: bool
    single_permitter: bool
    authenticated: bool
    regime: NetworkRegime
    permissioned: bool = False
    alpha: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if not self.sized and self.alpha is None:
            raise ValueError("unsized setting must declare alpha bounds")
        if not self.sized and self.alpha is not None and self.alpha[0] <= 0:
            raise ValueError("alpha lower bound must be positive")

    def descriptor(self) -> Any:
        return [
            "timed" if self.timed else "untimed",
            "sized" if self.sized else "unsized",
            "single" if self.single_permitter else "multi",
            "auth" if self.authenticated else "unauth",
            "permissioned" if self.permissioned else "permissionless",
            self.regime.descriptor(),
            list(self.alpha) if self.alpha else None,
        ]


def pow_style(regime: NetworkRegime, alpha: tuple[float, float]) -> SettingFlags:
    """The workload-style preset: untimed, unsized, single permitter."""
    return SettingFlags(
        timed=False, sized=False, single_permitter=True,
        authenticated=False, regime=regime, alpha=alpha,
    )


def pos_style(regime: NetworkRegime) -> SettingFlags:
    """The stake-style preset: timed, sized, multi permitter, authenticated."""
    return SettingFlags(
        timed=True, sized=True, single_permitter=False,
        authenticated=True, regime=regime,
    )
