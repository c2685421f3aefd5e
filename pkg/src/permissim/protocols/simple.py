"""Small protocols: idle processors, one-shot majority voting, echo toys.

These exist to exercise the model and to serve as the protocols that the
attack and compliance machinery is demonstrated against.  None of them is
a serious consensus protocol; naive-majority in particular is the strawman
that the simulation attacks split.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..core import (
    GENERAL,
    Identifier,
    Message,
    ProcessorSpec,
    Request,
    base_value_message,
    sign,
)
from ..permitters import (
    GrantAllIfFunded,
    PermissionedPermitter,
    ThresholdVotePermitter,
    VoteMintPermitter,
)
from ..resources import ConstantPool, NetworkRegime, SettingFlags, TablePool, pow_style
from ..scheduler import ProtocolInstance, TimingRule


def input_value(inputs: tuple[Message, ...], default: int = 0) -> int:
    """The value of the first general-signed base message among the inputs."""
    for m in inputs:
        if len(m.signers) == 1 and m.signers[0].is_general and m.payload in (0, 1):
            return m.payload
    return default


# ---------------------------------------------------------------------------
# Idle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdleState:
    pass


def idle_spec(pid: str, identifier: Identifier) -> ProcessorSpec:
    """Never broadcasts, never requests, never outputs."""

    def init(inputs):
        return IdleState()

    def transition(state, received, granted):
        return (), (), state

    return ProcessorSpec(
        pid, identifier, init, transition,
        reactive=False, input_sensitive=False,
    )


def build_idle(n: int = 3, delta: int = 1, seed: int = 0) -> ProtocolInstance:
    pids = [f"p{i}" for i in range(n)]
    idents = {p: Identifier(p) for p in pids}
    regime = NetworkRegime("synchronous", delta)
    return ProtocolInstance(
        processors={p: idle_spec(p, idents[p]) for p in pids},
        inputs={},
        pool=ConstantPool({idents[p]: 1.0 for p in pids}),
        oracle=GrantAllIfFunded(),
        setting=SettingFlags(
            timed=False, sized=True, single_permitter=True,
            authenticated=False, regime=regime,
        ),
        timing=TimingRule(regime),
        seed=seed,
        meta={"protocol": "idle", "horizon": 4, "deciders": []},
    )


# ---------------------------------------------------------------------------
# Naive majority voting
# ---------------------------------------------------------------------------


def parse_vote(message: Message) -> Optional[tuple[str, int]]:
    """(voter name, value) for a once-signed general base value, else None.

    Raw inputs carry only the general's signature and are not votes.
    """
    if len(message.signers) != 2 or message.timestamp is not None:
        return None
    general, voter = message.signers
    if not general.is_general or voter.is_general:
        return None
    if message.payload not in (0, 1):
        return None
    return voter.name, message.payload


def tally_votes(votes: frozenset[tuple[str, int]], own_value: int) -> int:
    """Majority over distinct (voter, value) votes; no votes falls back to
    the processor's own input, a tie to the default 0."""
    if not votes:
        return own_value
    ones = sum(1 for _, v in votes if v == 1)
    zeros = len(votes) - ones
    if ones == zeros:
        return 0
    return 1 if ones > zeros else 0


@dataclass(frozen=True)
class VoterState:
    slot: int
    value: int
    can_vote: bool
    voted: bool
    votes: frozenset
    decision: Optional[int]


def voter_spec(pid: str, identifier: Identifier, rounds: int = 1) -> ProcessorSpec:
    """One-shot voter: ask for permission at slot 1, vote once during the
    voting window, decide by majority right after it closes."""
    me = identifier

    def init(inputs):
        return VoterState(0, input_value(inputs), False, False, frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        votes = state.votes
        seen = {parse_vote(m) for m in received}
        seen.discard(None)
        if seen:
            votes = votes | seen
        vote_msg = sign(base_value_message(state.value), me)
        can = state.can_vote or granted.contains(vote_msg)
        broadcast: tuple = ()
        requests: tuple = ()
        voted = state.voted
        if slot == 1:
            requests = (Request(None, (), None),)
        if 2 <= slot <= rounds + 1 and can and not voted:
            broadcast = (vote_msg,)
            voted = True
            votes = votes | {(me.name, state.value)}
        decision = state.decision
        if slot == rounds + 2 and decision is None:
            decision = tally_votes(votes, state.value)
        return broadcast, requests, VoterState(slot, state.value, can, voted, votes, decision)

    def output(state):
        return state.decision

    return ProcessorSpec(pid, identifier, init, transition, output)


def build_naive_majority(
    n: int = 3,
    values: Optional[list[int]] = None,
    balances: Optional[list[float]] = None,
    permissioned: bool = False,
    rounds: int = 1,
    delta: int = 2,
    seed: int = 0,
    q: Optional[float] = None,
) -> ProtocolInstance:
    vals = list(values) if values is not None else [i % 2 for i in range(n)]
    bals = list(balances) if balances is not None else [1.0] * n
    if not (len(vals) == len(bals) == n):
        raise ValueError("values and balances must list one entry per processor")
    pids = [f"p{i}" for i in range(n)]
    idents = {p: Identifier(p) for p in pids}
    regime = NetworkRegime("synchronous", delta)
    pool = ConstantPool({idents[p]: b for p, b in zip(pids, bals)})
    return ProtocolInstance(
        processors={p: voter_spec(p, idents[p], rounds) for p in pids},
        inputs={p: (base_value_message(v),) for p, v in zip(pids, vals)},
        pool=pool,
        oracle=PermissionedPermitter() if permissioned else GrantAllIfFunded(),
        setting=SettingFlags(
            timed=False, sized=True, single_permitter=True,
            authenticated=False, regime=regime, permissioned=permissioned,
        ),
        timing=TimingRule(regime),
        seed=seed,
        q=q,
        meta={"protocol": "naive-majority", "horizon": rounds + 2, "deciders": pids},
    )


# ---------------------------------------------------------------------------
# Echo-or: two sources, two observers
# ---------------------------------------------------------------------------


def parse_echo_vote(message: Message) -> Optional[tuple[str, int]]:
    """(source name, bit) for an unsigned ("vote", name, bit) payload."""
    if message.signers or message.timestamp is not None:
        return None
    p = message.payload
    if isinstance(p, tuple) and len(p) == 3 and p[0] == "vote" and p[2] in (0, 1):
        return p[1], p[2]
    return None


@dataclass(frozen=True)
class SourceState:
    slot: int
    bit: int
    sent: bool


def source_spec(pid: str, identifier: Identifier, broadcast_slot: int) -> ProcessorSpec:
    """Requests its vote one slot ahead and broadcasts it once granted."""

    def init(inputs):
        return SourceState(0, input_value(inputs), False)

    def transition(state, received, granted):
        slot = state.slot + 1
        vote = Message(("vote", pid, state.bit))
        broadcast: tuple = ()
        requests: tuple = ()
        sent = state.sent
        if slot == broadcast_slot - 1:
            requests = (Request(None, (), ("vote", pid, state.bit)),)
        if slot == broadcast_slot and not sent and granted.contains(vote):
            broadcast = (vote,)
            sent = True
        return broadcast, requests, SourceState(slot, state.bit, sent)

    return ProcessorSpec(
        pid, identifier, init, transition,
        reactive=False, input_sensitive=True,
    )


@dataclass(frozen=True)
class ObserverState:
    slot: int
    bits: frozenset
    decision: Optional[int]


def observer_spec(pid: str, identifier: Identifier, decide_slot: int) -> ProcessorSpec:
    """Outputs the OR of the vote bits received before its decision slot
    closes.  Ignores its own input entirely."""

    def init(inputs):
        return ObserverState(0, frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        bits = state.bits
        seen = {parse_echo_vote(m) for m in received}
        seen.discard(None)
        if seen:
            bits = bits | {b for _, b in seen}
        decision = state.decision
        if slot == decide_slot and decision is None:
            decision = 1 if 1 in bits else 0
        return (), (), ObserverState(slot, bits, decision)

    def output(state):
        return state.decision

    return ProcessorSpec(
        pid, identifier, init, transition, output,
        reactive=True, input_sensitive=False,
    )


def build_echo_or(
    bits: tuple[int, int] = (0, 0),
    delta: int = 2,
    decide_slot: int = 4,
    rows: int = 6,
    seed: int = 0,
) -> ProtocolInstance:
    """Two sources vote at slots 2 and 3; two observers OR what they saw.

    The pool funds each source only at the slot its request lands on, padded
    with per-slot shadow identifiers so that distinct slots fund disjoint
    identifier sets and nobody ever holds more than half the total.
    """
    regime = NetworkRegime("synchronous", delta)
    idents = {
        "src2": Identifier("src2"), "src3": Identifier("src3"),
        "p0": Identifier("p0"), "p1": Identifier("p1"),
    }
    processors = {
        "src2": source_spec("src2", idents["src2"], 2),
        "src3": source_spec("src3", idents["src3"], 3),
        "p0": observer_spec("p0", idents["p0"], decide_slot),
        "p1": observer_spec("p1", idents["p1"], decide_slot),
    }
    table: dict[int, dict[Identifier, float]] = {}
    for t in range(1, rows + 1):
        row: dict[Identifier, float] = {}
        if t == 1:
            row[idents["src2"]] = 1.0
        elif t == 2:
            row[idents["src3"]] = 1.0
        while len(row) < 2:
            u = Identifier(f"shadow{t}-{len(row)}")
            pid = f"idle-{u.name}"
            idents[pid] = u
            processors[pid] = idle_spec(pid, u)
            row[u] = 1.0
        table[t] = row
    return ProtocolInstance(
        processors=processors,
        inputs={
            "src2": (base_value_message(bits[0]),),
            "src3": (base_value_message(bits[1]),),
        },
        pool=TablePool(table),
        oracle=VoteMintPermitter(),
        setting=SettingFlags(
            timed=False, sized=True, single_permitter=True,
            authenticated=False, regime=regime,
        ),
        timing=TimingRule(regime),
        seed=seed,
        meta={"protocol": "echo-or", "horizon": decide_slot + 2, "deciders": ["p0", "p1"]},
    )


# ---------------------------------------------------------------------------
# Echo-bb: the eclipse target
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EchoBbState:
    slot: int
    bit: int
    sent: bool
    votes: frozenset
    decision: Optional[int]


def echo_bb_spec(pid: str, identifier: Identifier, t0: int) -> ProcessorSpec:
    """Asks every slot for permission to vote, broadcasts the vote once, and
    at t0 outputs the majority bit seen, falling back to its own input."""

    def init(inputs):
        return EchoBbState(0, input_value(inputs), False, frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        votes = state.votes
        seen = {parse_echo_vote(m) for m in received}
        seen.discard(None)
        if seen:
            votes = votes | seen
        vote = Message(("vote", pid, state.bit))
        broadcast: tuple = ()
        requests: tuple = ()
        sent = state.sent
        if not sent and granted.contains(vote):
            broadcast = (vote,)
            sent = True
            votes = votes | {(pid, state.bit)}
        elif not sent and slot < t0:
            requests = (Request(None, (), ("vote", pid, state.bit)),)
        decision = state.decision
        if slot == t0 and decision is None:
            ones = sum(1 for _, b in votes if b == 1)
            zeros = len(votes) - ones
            if ones > zeros:
                decision = 1
            elif zeros > ones:
                decision = 0
            else:
                decision = state.bit
        return broadcast, requests, EchoBbState(slot, state.bit, sent, votes, decision)

    def output(state):
        return state.decision

    return ProcessorSpec(pid, identifier, init, transition, output)


def build_echo_bb(
    bits: tuple[int, int] = (0, 1),
    rate: float = 0.5,
    t0: int = 10,
    stabilization: int = 50,
    delta: int = 1,
    funded: tuple[bool, bool] = (True, True),
    defer_cross: bool = False,
    unit: float = 1.0,
    step: int = 1,
    seed: int = 0,
) -> ProtocolInstance:
    """Two processors race to learn each other's vote before slot t0.

    Runs under partial synchrony with late stabilization; with defer_cross
    set, every pre-stabilization broadcast between the pair lands only after
    stabilization, which eclipses them from each other through t0.
    """
    regime = NetworkRegime("partial", delta, stabilization)
    pids = ["p0", "p1"]
    idents = {p: Identifier(p) for p in pids}
    balances = {idents[p]: unit for p, f in zip(pids, funded) if f}
    defer = frozenset({("p0", "p1"), ("p1", "p0")}) if defer_cross else frozenset()
    return ProtocolInstance(
        processors={p: echo_bb_spec(p, idents[p], t0) for p in pids},
        inputs={p: (base_value_message(b),) for p, b in zip(pids, bits)},
        pool=ConstantPool(balances),
        oracle=ThresholdVotePermitter(rate),
        setting=pow_style(regime, alpha=(unit, 2.0 * unit)),
        timing=TimingRule(regime, step=step, defer_pairs=defer),
        seed=seed,
        meta={"protocol": "echo-bb", "horizon": t0, "deciders": pids},
    )
