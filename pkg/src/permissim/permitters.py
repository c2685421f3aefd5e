"""Permitter oracles.

A permitter answers each request with a permission set.  The answer may
depend on the determined variables, the request itself, and the balance of
the requester's identifier at the point the request names (and, in the
authenticated setting, on the requester's identity).  Every permissionless
oracle enforces no-balance-no-voice: a requester whose balance is zero gets
the empty permission set.

Randomness comes in two flavours, both derived deterministically from the
run seed:

* "independent": every (processor, slot, request) triple draws a fresh
  uniform sample, so repeated queries are independent.
* "fixed": the oracle behaves as one function sampled at the start of the
  run; the same request gets the same answer for the whole run (and, when
  the oracle is identity-blind, the same answer for every requester).

Oracles that never randomize use mode "deterministic".
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Any, Optional

from . import codec
from .chains import (
    GENESIS_ID,
    Block,
    as_chain,
    block_message,
    blocks_of,
    longest_tips,
    parse_block,
)
from .core import (
    ALL_MESSAGES,
    EMPTY_PERMISSION,
    FiniteMessages,
    Identifier,
    Message,
    PermissionSet,
    PredicatePermission,
    Request,
)
from .resources import ResourcePool


@dataclass
class Response:
    permission: PermissionSet
    diagnostic: Optional[str] = None


def success_probability(rate: float, balance: float) -> float:
    """Grant probability for a balance b at rate r: 1 - exp(-r b)."""
    return 1.0 - math.exp(-rate * balance)


@lru_cache(maxsize=4096)
def _cached_extra_key(extra: Any) -> bytes:
    return codec.part_bytes(extra)


def _extra_key(extra: Any) -> bytes:
    # Same bytes the digest would derive from the raw extra; caching them is
    # worthwhile because miners repeat one extra for many slots in a row.
    try:
        return _cached_extra_key(extra)
    except TypeError:
        return codec.part_bytes(extra)


class PermitterOracle:
    """Base oracle.  Subclasses implement _respond."""

    name = "oracle"
    mode = "deterministic"  # "independent" | "fixed" | "deterministic"
    grants_without_balance = False  # True only for the permissioned oracle
    _prefix = None  # absorbed ("query", name, run_seed) hash state
    _prefix_seed = None

    def respond(
        self,
        run_seed: int,
        pid: str,
        identifier: Identifier,
        slot: int,
        request: Request,
        balance: float,
    ) -> Response:
        if balance <= 0.0 and not self.grants_without_balance:
            return Response(EMPTY_PERMISSION, "no balance")
        return self._respond(run_seed, pid, identifier, slot, request, balance)

    def _respond(self, run_seed, pid, identifier, slot, request, balance) -> Response:
        raise NotImplementedError

    def _draw(self, run_seed: int, pid: str, slot: int, request: Request) -> float:
        """Uniform sample in [0, 1) under this oracle's randomness mode.

        Independent draws are keyed by (oracle, run, processor, slot, extra):
        separate processors, slots, and request extras draw independently,
        and re-running with the same seed replays the same samples.  Fixed
        draws are keyed by the full request content and nothing else, so one
        answer function holds for the whole run.
        """
        if self.mode == "independent":
            prefix = self._prefix
            if prefix is None or self._prefix_seed != run_seed:
                prefix = codec.digest_prefix("query", self.name, run_seed)
                self._prefix, self._prefix_seed = prefix, run_seed
            return codec.uniform01_from(prefix, pid, slot, _extra_key(request.extra))
        if self.mode == "fixed":
            return codec.uniform01("fixed", self.name, run_seed, request.key())
        raise RuntimeError("deterministic oracle asked for randomness")

    def descriptor(self) -> Any:
        return [self.name, self.mode]


class PermissionedPermitter(PermitterOracle):
    """The permissioned setting: everything is permitted, always."""

    name = "permissioned"
    grants_without_balance = True

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        return Response(ALL_MESSAGES)


class GrantAllIfFunded(PermitterOracle):
    """Unrestricted permission for any funded requester (deterministic)."""

    name = "grant-all-if-funded"

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        return Response(ALL_MESSAGES)


class UniversalSeedPermitter(PermitterOracle):
    """Grants everything in response to the canonical seed request.

    The seed request is (slot 0, empty message set, no extra): the request
    whose balance point is the starting allocation.  Any other request gets
    nothing.  Deterministic, so protocols built on it stay deterministic.
    """

    name = "universal-seed"

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        if request.slot == 0 and not request.messages and request.extra is None:
            return Response(ALL_MESSAGES)
        return Response(EMPTY_PERMISSION, "unsupported request shape")


class VoteMintPermitter(PermitterOracle):
    """Deterministically grants the single vote message a request names.

    The request extra must be ("vote", source_name, value).  Identity-blind:
    any funded requester may mint any vote shape, which is fine for the
    delay-only fault models this oracle is used with.
    """

    name = "vote-mint"

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        extra = request.extra
        if (
            isinstance(extra, tuple)
            and len(extra) == 3
            and extra[0] == "vote"
            and isinstance(extra[1], str)
            and extra[2] in (0, 1)
        ):
            return Response(FiniteMessages([Message(extra)]))
        return Response(EMPTY_PERMISSION, "malformed vote request")


class ThresholdVotePermitter(PermitterOracle):
    """Probabilistic vote minting: grant with probability 1 - exp(-rate b).

    Used by protocols for the unsized setting, where repeated requests model
    work expended per slot.
    """

    name = "threshold-vote"
    mode = "independent"

    def __init__(self, rate: float):
        self.rate = rate

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        extra = request.extra
        if not (
            isinstance(extra, tuple)
            and len(extra) == 3
            and extra[0] == "vote"
            and isinstance(extra[1], str)
            and extra[2] in (0, 1)
        ):
            return Response(EMPTY_PERMISSION, "malformed vote request")
        if self._draw(run_seed, pid, slot, request) < success_probability(self.rate, balance):
            return Response(FiniteMessages([Message(extra)]))
        return Response(EMPTY_PERMISSION)

    def descriptor(self):
        return [self.name, self.mode, self.rate]


class PowPermitter(PermitterOracle):
    """Workload-style block permitter for the untimed, unsized setting.

    The request extra is a candidate ("block", parent_id, producer, data)
    whose parent must be a longest-chain tip among the blocks of the request
    message set (the genesis id when it has no blocks).  A valid candidate
    is granted with probability 1 - exp(-rate b); each query draws an
    independent sample.
    """

    name = "pow"
    mode = "independent"

    def __init__(self, rate: float):
        self.rate = rate
        # miners cite the same message set slot after slot; remember its tips
        self._tips_cache: dict[frozenset, list[str]] = {}

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        extra = request.extra
        if not (
            isinstance(extra, tuple)
            and len(extra) == 4
            and extra[0] == "block"
            and isinstance(extra[1], str)
            and isinstance(extra[2], str)
        ):
            return Response(EMPTY_PERMISSION, "malformed block request")
        tips = self._tips_cache.get(request.messages)
        if tips is None:
            tips = longest_tips(blocks_of(request.messages))
            if len(self._tips_cache) > 4096:
                self._tips_cache.clear()
            self._tips_cache[request.messages] = tips
        if extra[1] not in tips:
            return Response(EMPTY_PERMISSION, "parent is not a longest-chain tip")
        if self._draw(run_seed, pid, slot, request) < success_probability(self.rate, balance):
            block = Block(parent=extra[1], producer=extra[2], slot=None, data=extra[3])
            return Response(FiniteMessages([block_message(block, timed=False)]))
        return Response(EMPTY_PERMISSION)

    def descriptor(self):
        return [self.name, self.mode, self.rate]


class PosLeaderPermitter(PermitterOracle):
    """Stake-style leader permitter for the timed, sized setting.

    A request names a future slot and carries a chain as its message set.
    One leader per (chain, slot) pair is drawn once per run, weighted by
    balance at that point.  The leader (and only the leader) is permitted
    the whole family of validly timestamped blocks extending the chain.
    """

    name = "pos-leader"
    mode = "fixed"

    def __init__(self, pool: ResourcePool):
        self.pool = pool

    def _respond(self, run_seed, pid, identifier, slot, request, balance):
        if request.slot is None:
            return Response(EMPTY_PERMISSION, "request missing slot")
        tip = as_chain(request.messages)
        if tip is None:
            return Response(EMPTY_PERMISSION, "request messages are not a chain")
        tip_slot = 0
        if tip != GENESIS_ID:
            tip_slot = blocks_of(request.messages)[tip].slot or 0
        if request.slot <= tip_slot:
            return Response(EMPTY_PERMISSION, "slot does not extend the chain")
        support = self.pool.support(request.slot, request.messages)
        leader = weighted_choice(support, self._draw(run_seed, pid, slot, request))
        if leader != identifier:
            return Response(EMPTY_PERMISSION)
        return Response(extension_permission(tip, request.slot, leader.name))

    def descriptor(self):
        return [self.name, self.mode, self.pool.descriptor()]


def extension_permission(parent: str, slot: int, producer: str) -> PermissionSet:
    """All validly timestamped blocks a leader may place at (parent, slot)."""

    def predicate(m: Message) -> bool:
        blk = parse_block(m)
        return (
            blk is not None
            and not m.signers
            and blk.parent == parent
            and blk.slot == slot
            and blk.producer == producer
            and m.timestamp == slot
        )

    return PredicatePermission("extend", [parent, slot, producer], predicate)


def weighted_choice(support: dict[Identifier, float], u: float) -> Optional[Identifier]:
    """Pick an identifier with probability proportional to its balance.

    Iteration is in identifier order so the draw is deterministic in u.
    Scaling every balance by a positive constant leaves the distribution
    unchanged.
    """
    items = sorted(((ident, b) for ident, b in support.items() if b > 0.0),
                   key=lambda kv: kv[0].name)
    total = sum(b for _, b in items)
    if total <= 0.0:
        return None
    acc = 0.0
    for ident, b in items:
        acc += b / total
        if u < acc:
            return ident
    return items[-1][0]
