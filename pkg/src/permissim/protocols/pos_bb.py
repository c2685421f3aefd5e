"""Byzantine broadcast for funded identifiers.

The processors whose identifiers hold balance at (0, empty) run a signed
relay protocol in rounds of length twice the message delay: a value is
adopted when it arrives wrapped in i distinct funded signatures by the
i-th round time, and adopting it means relaying it with one more
signature.  Everyone else listens along, one delay early, and outputs with
the insiders without ever broadcasting.

check_relay_invariants re-derives the adoption times of every processor
from the raw receipt slots in a trace and confirms the two relay bounds
that make the outputs agree: an insider adoption by round i forces every
adoption by round i + 1, and any (k+1)-deep receipt forces adoption
everywhere by round k + 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from ..core import (
    ContractViolation,
    Identifier,
    Message,
    ProcessorSpec,
    Request,
    base_value_message,
    sign,
)
from ..permitters import UniversalSeedPermitter
from ..resources import ConstantPool, NetworkRegime, ResourcePool, pos_style
from ..scheduler import ProtocolInstance, TimingRule, Trace


def round_time(i: int, delta: int) -> int:
    """Round i happens at slot 2 + 2*delta*i."""
    return 2 + 2 * delta * i


def funded_identifiers(pool: ResourcePool) -> list[Identifier]:
    """The identifiers holding balance at slot 0 against the empty set."""
    return sorted(u for u, b in pool.support(0, frozenset()).items() if b != 0.0)


def id_bound(balances: Iterable[float], q: float) -> int:
    """Most funded identifiers the adversary could control: the largest
    count of balances summing to at most a q fraction of the total."""
    bals = sorted(float(b) for b in balances)
    total = sum(bals)
    budget = q * total + 1e-12
    count = 0
    acc = 0.0
    for b in bals:
        if acc + b > budget:
            break
        acc += b
        count += 1
    return count


def parse_relay(message: Message, ustar_names: frozenset[str]) -> Optional[tuple[int, int]]:
    """(depth, value) if the message is a binary value signed by the general
    and then by `depth` distinct funded identifiers, else None."""
    signers = message.signers
    if not signers or not signers[0].is_general or message.timestamp is not None:
        return None
    if message.payload not in (0, 1):
        return None
    rest = [u.name for u in signers[1:]]
    if len(set(rest)) != len(rest) or not set(rest) <= ustar_names:
        return None
    return len(rest), message.payload


# ---------------------------------------------------------------------------
# State machines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RelayState:
    slot: int
    buckets: dict  # depth -> frozenset of relay messages
    seen: frozenset  # adopted values
    decision: Optional[int]


def _bucket_in(buckets: dict, received, ustar_names) -> dict:
    """Return buckets extended with the relay-form messages in `received`,
    copying only when something new arrives."""
    fresh = None
    for m in received:
        parsed = parse_relay(m, ustar_names)
        if parsed is None:
            continue
        d = parsed[0]
        if m in buckets.get(d, ()):
            continue
        if fresh is None:
            fresh = dict(buckets)
        fresh[d] = fresh.get(d, frozenset()) | {m}
    return buckets if fresh is None else fresh


def insider_spec(
    pid: str,
    identifier: Identifier,
    ustar_names: frozenset[str],
    k: int,
    delta: int,
) -> ProcessorSpec:
    me = identifier
    period = 2 * delta
    decide_at = round_time(k + 1, delta)

    def init(inputs):
        return RelayState(0, _bucket_in({}, inputs, ustar_names), frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        buckets = _bucket_in(state.buckets, received, ustar_names)
        seen = state.seen
        broadcast = []
        requests: tuple = ()
        if slot == 1:
            requests = (Request(0, (), None),)
        if slot >= 2 and (slot - 2) % period == 0:
            i = (slot - 2) // period
            for m in sorted(buckets.get(i, ())):
                z = m.payload
                if z not in seen:
                    seen = seen | {z}
                    broadcast.append(sign(m, me))
        decision = state.decision
        if slot == decide_at and decision is None:
            decision = next(iter(seen)) if len(seen) == 1 else 0
        return broadcast, requests, RelayState(slot, buckets, seen, decision)

    def output(state):
        return state.decision

    return ProcessorSpec(pid, identifier, init, transition, output)


def outsider_spec(
    pid: str,
    identifier: Identifier,
    ustar_names: frozenset[str],
    k: int,
    delta: int,
) -> ProcessorSpec:
    """Same adoption rule, one delay early, never broadcasting.  Depth zero
    is never processed, so an outsider's own input cannot sway it."""
    period = 2 * delta
    decide_at = round_time(k + 1, delta)

    def init(inputs):
        return RelayState(0, _bucket_in({}, inputs, ustar_names), frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        buckets = _bucket_in(state.buckets, received, ustar_names)
        seen = state.seen
        offset = slot - 2 + delta
        if offset >= period and offset % period == 0:
            i = offset // period
            for m in sorted(buckets.get(i, ())):
                z = m.payload
                if z not in seen:
                    seen = seen | {z}
        decision = state.decision
        if slot == decide_at and decision is None:
            decision = next(iter(seen)) if len(seen) == 1 else 0
        return (), (), RelayState(slot, buckets, seen, decision)

    def output(state):
        return state.decision

    return ProcessorSpec(pid, identifier, init, transition, output)


def eager_relayer_spec(
    pid: str,
    identifier: Identifier,
    ustar_names: frozenset[str],
) -> ProcessorSpec:
    """Faulty insider that re-signs and rebroadcasts every relay it has seen
    as soon as it can, ignoring round times.  A stress source for the relay
    invariant checks; only ever run under adversary control."""
    me = identifier

    def init(inputs):
        known = frozenset(
            m for m in inputs if parse_relay(m, ustar_names) is not None
        )
        return RelayState(0, {0: known} if known else {}, frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        buckets = _bucket_in(state.buckets, received, ustar_names)
        requests: tuple = ()
        if slot == 1:
            requests = (Request(0, (), None),)
        broadcast = []
        relayed = state.seen  # reused as the set of already-relayed hexes
        if slot >= 2:
            for d in sorted(buckets):
                for m in sorted(buckets[d]):
                    if m.hex() in relayed or any(u == me for u in m.signers):
                        continue
                    relayed = relayed | {m.hex()}
                    broadcast.append(sign(m, me))
        return broadcast, requests, RelayState(slot, buckets, relayed, None)

    return ProcessorSpec(pid, identifier, init, transition)


# ---------------------------------------------------------------------------
# Instance builder
# ---------------------------------------------------------------------------


def build_pos_bb(
    insiders: int = 3,
    outsiders: int = 1,
    balances: Optional[list[float]] = None,
    q: float = 0.5,
    delta: int = 2,
    values=1,
    step: int = 1,
    seed: int = 0,
) -> ProtocolInstance:
    """Instance with `insiders` funded processors and `outsiders` listeners.

    values fixes the general's claims: an int for a unanimous general, or a
    dict pid -> int | tuple of ints for an equivocating one.
    """
    bals = list(balances) if balances is not None else [1.0] * insiders
    if len(bals) != insiders:
        raise ValueError("need one balance per insider")
    ins = [f"ins{i}" for i in range(insiders)]
    outs = [f"out{j}" for j in range(outsiders)]
    idents = {p: Identifier(p) for p in ins + outs}
    ustar_names = frozenset(ins)
    k = id_bound(bals, q)
    regime = NetworkRegime("synchronous", delta)

    def claims(pid) -> tuple[int, ...]:
        if isinstance(values, dict):
            v = values.get(pid, ())
            return tuple(v) if isinstance(v, (tuple, list)) else (v,)
        return (values,)

    processors = {}
    for p in ins:
        processors[p] = insider_spec(p, idents[p], ustar_names, k, delta)
    for p in outs:
        processors[p] = outsider_spec(p, idents[p], ustar_names, k, delta)
    return ProtocolInstance(
        processors=processors,
        inputs={p: tuple(base_value_message(v) for v in claims(p)) for p in ins + outs},
        pool=ConstantPool({idents[p]: b for p, b in zip(ins, bals)}),
        oracle=UniversalSeedPermitter(),
        setting=pos_style(regime),
        timing=TimingRule(regime, step=step),
        seed=seed,
        q=q,
        meta={
            "protocol": "pos-bb",
            "horizon": round_time(k + 1, delta),
            "k": k,
            "delta": delta,
            "ustar": sorted(ustar_names),
            "insiders": ins,
            "outsiders": outs,
            "deciders": ins + outs,
        },
    )


# ---------------------------------------------------------------------------
# Relay invariants
# ---------------------------------------------------------------------------


def adoption_rounds(
    trace: Trace,
    ustar_names: frozenset[str],
    insider_pids: frozenset[str],
    delta: int,
    k: int,
) -> dict[str, dict[int, float]]:
    """For every processor, the least round by which each value would be
    adopted, recomputed from raw receipt slots alone.

    A value is adopted by round i when some depth-i relay of it arrived by
    that processor's round-i deadline: the round time for insiders, one
    delay earlier for outsiders (who also skip depth zero).  Rounds past
    k + 1 count as never.
    """
    ustar_names = frozenset(ustar_names)
    insider_pids = frozenset(insider_pids)
    rounds: dict[str, dict[int, float]] = {}
    for pid in trace.pids:
        insider = pid in insider_pids
        best = {0: float("inf"), 1: float("inf")}
        receipts: dict[Message, int] = {}
        for m in trace.inputs.get(pid, ()):
            receipts.setdefault(m, 0)
        for slot in range(1, trace.horizon + 1):
            step = trace.step_at(pid, slot)
            if step.received is None:
                raise ContractViolation("relay invariants need a full-record trace")
            for m in step.received:
                receipts.setdefault(m, slot)
        for m, slot in receipts.items():
            parsed = parse_relay(m, ustar_names)
            if parsed is None:
                continue
            d, z = parsed
            if d > k + 1:
                continue
            deadline = round_time(d, delta) - (0 if insider else delta)
            if insider or d >= 1:
                if slot <= deadline and d < best[z]:
                    best[z] = d
        rounds[pid] = best
    return rounds


def check_relay_invariants(
    trace: Trace,
    ustar_names: frozenset[str],
    insider_pids: frozenset[str],
    delta: int,
    k: int,
    faulty: frozenset[str] = frozenset(),
) -> list[str]:
    """Violations of the two relay bounds in a trace (empty when clean).

    Bound one: a non-faulty insider adopting z by round i <= k forces every
    non-faulty processor to adopt z by round i + 1.  Bound two: anyone
    receiving a (k+1)-deep relay of z by the final round time forces every
    non-faulty processor to adopt z by round k + 1.
    """
    ustar_names = frozenset(ustar_names)
    insider_pids = frozenset(insider_pids)
    rounds = adoption_rounds(trace, ustar_names, insider_pids, delta, k)
    honest = [p for p in trace.pids if p not in faulty]
    violations = []
    for z in (0, 1):
        for p in honest:
            if p not in insider_pids:
                continue
            i = rounds[p][z]
            if i > k:
                continue
            for p2 in honest:
                if rounds[p2][z] > i + 1:
                    violations.append(
                        f"insider {p} adopted {z} by round {int(i)} but {p2} "
                        f"only by {rounds[p2][z]}"
                    )
        deep_receipt = False
        final = round_time(k + 1, delta)
        for pid in trace.pids:
            for slot in range(1, min(final, trace.horizon) + 1):
                for m in (trace.step_at(pid, slot).received or ()):
                    parsed = parse_relay(m, ustar_names)
                    if parsed == (k + 1, z):
                        deep_receipt = True
                        break
                if deep_receipt:
                    break
            if deep_receipt:
                break
        if deep_receipt:
            for p2 in honest:
                if rounds[p2][z] > k + 1:
                    violations.append(
                        f"a depth-{k + 1} relay of {z} was received by slot "
                        f"{final} but {p2} never adopted it"
                    )
    return violations
