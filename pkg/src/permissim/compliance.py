"""Deviation calculus over fixed-length runs of a deterministic protocol.

A k-slot run of a protocol family is described relative to the all-defaults
run by a finite set of deviation tuples:

    (p,)      p's input is flipped from zero to one
    (p, p')   p's broadcast messages reach p' one slot late (broadcast + 2)
    (p, t')   p's instructed broadcasts are all deferred to slot t'

Absent deviations mean: input zero, broadcasts as instructed, delivery one
slot after broadcast.  The calculus assumes every processor that can ever be
instructed to broadcast does so at a single slot, its class; the classes are
discovered by bounded enumeration in compute_partition.  Two designated
never-broadcasting watchers drive the compliance notion: a sequence of
deviation sets is compliant when each adjacent pair expands to runs that at
least one watcher cannot tell apart, and no set defers two broadcasters of
the same class.

remove_broadcasts walks a broadcaster's messages out to slot k one compliant
step at a time, add_broadcasts walks them back, and change_input composes
the two around an input flip.  build_full_chain chains the flips of every
broadcaster and both watchers into a single compliant sequence from the
all-zeros run to the all-ones run, which is what the impossibility
demonstrator walks: a deterministic, weakly decentralised protocol that
decides within k slots must break agreement or validity somewhere along it.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional

from .adversary import indistinguishable_for
from .core import ContractViolation, base_value_message
from .resources import check_disjoint_supports, check_identifier_fraction
from .scheduler import (
    AdversaryStrategy,
    ProtocolInstance,
    TimingRule,
    Trace,
    run_execution,
)
from .protocols.properties import check_weak_decentralisation

Deviation = tuple


# ---------------------------------------------------------------------------
# Deviation sets
# ---------------------------------------------------------------------------


def _is_defer(d: Deviation) -> bool:
    return len(d) == 2 and isinstance(d[1], int) and not isinstance(d[1], bool)


def _is_receipt_delay(d: Deviation) -> bool:
    return len(d) == 2 and isinstance(d[1], str)


def flipped_processors(zeta: Iterable[Deviation]) -> frozenset:
    return frozenset(d[0] for d in zeta if len(d) == 1)


def _dev_key(d: Deviation):
    if len(d) == 1:
        return (d[0], 0, "")
    return (d[0], 1 if isinstance(d[1], str) else 2, str(d[1]))


def zeta_to_json(zeta: Iterable[Deviation]) -> list:
    return [list(d) for d in sorted(zeta, key=_dev_key)]


def chain_to_json(kappa: Iterable[Iterable[Deviation]]) -> list:
    """Deviation tuples verbatim, each set sorted canonically."""
    return [zeta_to_json(z) for z in kappa]


def chain_from_json(data: Iterable[Iterable[list]]) -> list[frozenset]:
    return [frozenset(tuple(d) for d in z) for z in data]


def _zeta_ge(zeta: frozenset, t: int, class_of: Mapping[str, int]) -> frozenset:
    """The delay deviations whose broadcaster's class is at least t."""
    return frozenset(
        d for d in zeta if len(d) == 2 and class_of.get(d[0], -1) >= t
    )


# ---------------------------------------------------------------------------
# Broadcast classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Partition:
    """Broadcaster classes of a protocol family, found by enumeration.

    class_of maps each processor that can be instructed to broadcast in some
    run to the single slot at which it does so.  watchers are the two
    designated processors whose views drive compliance; quiet collects the
    remaining never-broadcasters.  messages_by_slot[t] holds the encodings
    of every message some run broadcasts by slot t, and permitted_by_slot[t]
    the processors holding a nonempty permission by slot t, both cumulative.
    """

    class_of: Mapping[str, int]
    watchers: tuple[str, str]
    quiet: tuple[str, ...]
    messages_by_slot: Mapping[int, frozenset]
    permitted_by_slot: Mapping[int, frozenset]
    runs_enumerated: int

    def broadcasters(self, lo: int, hi: int) -> tuple[str, ...]:
        """Processors whose class lies strictly between lo and hi."""
        return tuple(sorted(p for p, t in self.class_of.items() if lo < t < hi))


def _instance_for(
    base: ProtocolInstance,
    bits: Mapping[str, int],
    defers: Mapping[tuple[str, int], int],
    pairs: Mapping[tuple[str, str], int],
) -> ProtocolInstance:
    """The base instance with inputs, deferrals, and pair delays applied."""
    inputs = {
        pid: (base_value_message(bits.get(pid, 0)),) for pid in base.processors
    }
    adversary = None
    if defers:
        adversary = AdversaryStrategy(
            pids=frozenset(p for p, _ in defers),
            delay_schedule=dict(defers),
            name="deviations",
        )
    timing = base.timing
    if pairs:
        timing = TimingRule(
            timing.regime, step=timing.step,
            pair_step=dict(pairs), defer_pairs=timing.defer_pairs,
        )
    return replace(base, inputs=inputs, timing=timing, adversary=adversary)


def _grid_size(class_of, sensitive, reactive, k) -> int:
    defer_opts = math.prod(k - t + 1 for t in class_of.values())
    pair_count = sum(1 for p in class_of for r in reactive if r != p)
    return (2 ** len(sensitive)) * defer_opts * (2 ** pair_count)


def _deviation_grid(class_of, sensitive, reactive, k):
    """Every run of the deviation grammar over the known broadcasters.

    Yields (input bits, deferrals, delayed pairs).  Inputs range over the
    input-sensitive processors; each broadcaster may defer its class slot's
    broadcasts to any later slot up to k; each (broadcaster, receiver) pair
    may be delivered one slot late.  Non-reactive receivers never act on
    what they receive, so delaying their receipts is pruned, and processors
    that ignore their input keep input zero.
    """
    bcasters = sorted(class_of)
    defer_opts = [
        [None] + list(range(class_of[p] + 1, k + 1)) for p in bcasters
    ]
    pair_ids = [(p, r) for p in bcasters for r in reactive if r != p]
    for bits_tuple in itertools.product((0, 1), repeat=len(sensitive)):
        bits = dict(zip(sensitive, bits_tuple))
        for defer_choice in itertools.product(*defer_opts):
            defers = {
                (p, class_of[p]): to
                for p, to in zip(bcasters, defer_choice)
                if to is not None
            }
            for mask in itertools.product((False, True), repeat=len(pair_ids)):
                pairs = {pr: 2 for pr, on in zip(pair_ids, mask) if on}
                yield bits, defers, pairs


def compute_partition(
    base: ProtocolInstance,
    k: int,
    watchers: tuple[str, str] = ("p0", "p1"),
    budget: int = 20000,
) -> Partition:
    """Discover who can be instructed to broadcast, and when.

    Runs the deviation grammar to a fixpoint: first with no known
    broadcasters (inputs only), then again with deferral and receipt-delay
    choices for each broadcaster found, until no new ones appear.  Raises if
    the enumeration would exceed the run budget, or if some processor is
    instructed to broadcast at two different slots (the one-slot-per-
    broadcaster premise of the calculus).
    """
    specs = base.processors
    for w in watchers:
        if w not in specs:
            raise ValueError(f"watcher {w!r} is not a processor")
    sensitive = tuple(sorted(p for p, s in specs.items() if s.input_sensitive))
    reactive = tuple(sorted(p for p, s in specs.items() if s.reactive))
    class_of: dict[str, int] = {}
    runs = 0
    msg_incr: dict[int, set] = {}
    perm_incr: dict[int, set] = {}
    while True:
        seen: dict[str, set] = {}

        def observe(t, pid, received, instructed, state, granted):
            if instructed:
                seen.setdefault(pid, set()).add(t)
                msg_incr.setdefault(t, set()).update(m.hex() for m in instructed)
            if not granted.is_empty:
                perm_incr.setdefault(t, set()).add(pid)

        needed = _grid_size(class_of, sensitive, reactive, k)
        if runs + needed > budget:
            raise ContractViolation(
                f"class discovery needs {runs + needed} runs, over the "
                f"budget of {budget}"
            )
        for bits, defers, pairs in _deviation_grid(class_of, sensitive, reactive, k):
            runs += 1
            run_execution(
                _instance_for(base, bits, defers, pairs), k,
                record="light", observer=observe,
            )
        new_class: dict[str, int] = {}
        for pid, slots in seen.items():
            if len(slots) > 1:
                raise ContractViolation(
                    f"{pid} can be instructed to broadcast at slots "
                    f"{sorted(slots)}; the one-slot-per-broadcaster premise fails"
                )
            new_class[pid] = next(iter(slots))
        if new_class == class_of:
            break
        class_of = new_class
    msgs: dict[int, frozenset] = {}
    perms: dict[int, frozenset] = {}
    acc_m: set = set()
    acc_q: set = set()
    for t in range(1, k + 1):
        acc_m |= msg_incr.get(t, set())
        acc_q |= perm_incr.get(t, set())
        msgs[t] = frozenset(acc_m)
        perms[t] = frozenset(acc_q)
    quiet = tuple(sorted(set(specs) - set(class_of) - set(watchers)))
    return Partition(
        class_of=dict(sorted(class_of.items())),
        watchers=tuple(watchers),
        quiet=quiet,
        messages_by_slot=msgs,
        permitted_by_slot=perms,
        runs_enumerated=runs,
    )


# ---------------------------------------------------------------------------
# Context and expansion
# ---------------------------------------------------------------------------


@dataclass
class ComplianceContext:
    """One protocol family, its classes, and an expansion cache."""

    base: ProtocolInstance
    k: int
    partition: Partition
    q: float = 0.5
    budget: int = 20000
    _traces: dict = field(default_factory=dict, repr=False)

    @property
    def watchers(self) -> tuple[str, str]:
        return self.partition.watchers

    def later_parties(self, t: int) -> tuple[str, ...]:
        """Broadcasters of classes strictly between t and k, plus both
        watchers, in ascending pid order."""
        out = set(self.partition.broadcasters(t, self.k))
        out.update(self.partition.watchers)
        return tuple(sorted(out))


def build_compliance_context(
    base: ProtocolInstance,
    k: int,
    watchers: tuple[str, str] = ("p0", "p1"),
    q: float = 0.5,
    budget: int = 20000,
    check_pool: bool = True,
) -> ComplianceContext:
    """Validate the calculus preconditions and package the partition.

    Requires a deterministic permitter, watchers that never broadcast, a
    synchrony bound of at least two slots whenever anybody broadcasts (the
    receipt-delay deviation lands at broadcast + 2), and, unless check_pool
    is disabled, a pool whose slots fund disjoint identifier sets with no
    identifier above a q fraction of any slot's total.
    """
    if base.oracle.mode != "deterministic":
        raise ValueError(
            f"permitter {base.oracle.name!r} randomizes (mode {base.oracle.mode!r}); "
            "the calculus needs a deterministic permitter"
        )
    partition = compute_partition(base, k, watchers, budget)
    for w in watchers:
        if w in partition.class_of:
            raise ValueError(
                f"watcher {w} can be instructed to broadcast "
                f"(class {partition.class_of[w]})"
            )
    if partition.class_of and base.setting.regime.delta < 2:
        raise ValueError(
            "receipt delays land at broadcast + 2; the regime needs delta >= 2"
        )
    if check_pool:
        domain = [(t, frozenset()) for t in range(1, k + 1)]
        ok, witness = check_disjoint_supports(base.pool, domain)
        if not ok:
            raise ValueError(
                f"pool funds identifier {witness[2]} at slots {witness[0]} "
                f"and {witness[1]}; slot supports must be disjoint"
            )
        ok, witness = check_identifier_fraction(base.pool, q, domain)
        if not ok:
            raise ValueError(
                f"identifier {witness[1]} holds a {witness[2]:.3f} fraction "
                f"at slot {witness[0]}, above q={q}"
            )
    return ComplianceContext(base, k, partition, q, budget)


def expand_deviations(ctx: ComplianceContext, zeta: Iterable[Deviation]) -> Trace:
    """The deterministic k-slot trace that a deviation set specifies."""
    zeta = frozenset(tuple(d) for d in zeta)
    cached = ctx._traces.get(zeta)
    if cached is not None:
        return cached
    class_of = ctx.partition.class_of
    bits: dict[str, int] = {}
    defers: dict[tuple[str, int], int] = {}
    pairs: dict[tuple[str, str], int] = {}
    for d in sorted(zeta, key=_dev_key):
        if len(d) == 1 and isinstance(d[0], str):
            if d[0] not in ctx.base.processors:
                raise ValueError(f"unknown processor in deviation {d!r}")
            bits[d[0]] = 1
        elif _is_receipt_delay(d):
            p, r = d
            if p not in class_of:
                raise ValueError(f"{p} never broadcasts; deviation {d!r} is inert")
            if r not in ctx.base.processors or r == p:
                raise ValueError(f"bad receiver in deviation {d!r}")
            pairs[(p, r)] = 2
        elif _is_defer(d):
            p, to = d
            t = class_of.get(p)
            if t is None:
                raise ValueError(f"{p} never broadcasts; deviation {d!r} is inert")
            if not t < to <= ctx.k:
                raise ValueError(
                    f"deferral {d!r} must land strictly after slot {t} "
                    f"and by slot {ctx.k}"
                )
            if (p, t) in defers:
                raise ValueError(f"two deferrals for {p}")
            defers[(p, t)] = to
        else:
            raise ValueError(f"not a deviation tuple: {d!r}")
    trace = run_execution(_instance_for(ctx.base, bits, defers, pairs), ctx.k)
    ctx._traces[zeta] = trace
    return trace


def is_compliant(
    ctx: ComplianceContext, kappa: Iterable[Iterable[Deviation]]
) -> tuple[bool, Optional[str]]:
    """Check a sequence of deviation sets for the two compliance conditions.

    (i) every adjacent pair must expand to runs that are byte-identical in
    at least one watcher's view through slot k; (ii) no element may defer
    two broadcasters of the same class.  Returns (ok, why), why naming the
    first failing element or pair.
    """
    class_of = ctx.partition.class_of
    seq = [frozenset(tuple(d) for d in z) for z in kappa]
    for idx, zeta in enumerate(seq):
        per_class: dict[int, set] = {}
        for d in zeta:
            if _is_defer(d):
                per_class.setdefault(class_of[d[0]], set()).add(d[0])
        for t, ps in per_class.items():
            if len(ps) > 1:
                return False, (
                    f"element {idx} defers {sorted(ps)}, two broadcasters "
                    f"of class {t}"
                )
    for idx in range(len(seq) - 1):
        a = expand_deviations(ctx, seq[idx])
        b = expand_deviations(ctx, seq[idx + 1])
        if not any(
            indistinguishable_for(a, b, w, through=ctx.k) for w in ctx.watchers
        ):
            return False, (
                f"pair ({idx}, {idx + 1}) is distinguishable for both watchers"
            )
    return True, None


# ---------------------------------------------------------------------------
# The three procedures
# ---------------------------------------------------------------------------


def remove_broadcasts(
    ctx: ComplianceContext, p: str, kappa: list[frozenset]
) -> list[frozenset]:
    """Extend kappa so its final run postpones p's broadcasts to slot k.

    Identity when p never broadcasts before k.  Otherwise works outward one
    slot at a time; before p's broadcasts move from slot j-1 to j, every
    later-class broadcaster and both watchers are taken out of the way in
    turn, handed a one-slot receipt delay for p's messages, and restored, so
    that no single step is visible to both watchers at once.

    Requires the final run to carry no delay deviations at class t or later
    (t being p's class); afterwards that region holds exactly (p, k) and
    everything below it is untouched.  Both ends are machine-checked.
    """
    t = ctx.partition.class_of.get(p)
    if t is None or t >= ctx.k:
        return kappa
    class_of = ctx.partition.class_of
    start = kappa[-1]
    high = _zeta_ge(start, t, class_of)
    if high:
        raise ContractViolation(
            f"remove_broadcasts({p}) needs no delay deviations at class {t} "
            f"or later, found {zeta_to_json(high)}"
        )
    peers = ctx.later_parties(t)
    for j in range(t + 1, ctx.k + 1):
        for q in peers:
            kappa = remove_broadcasts(ctx, q, kappa)
            kappa.append(kappa[-1] | {(p, q)})
            kappa = add_broadcasts(ctx, q, kappa)
        nxt = (kappa[-1] - {(p, q) for q in peers} - {(p, j - 1)}) | {(p, j)}
        kappa.append(nxt)
    end = kappa[-1]
    if _zeta_ge(end, t, class_of) != {(p, ctx.k)}:
        raise ContractViolation(
            f"remove_broadcasts({p}): expected only ({p}, {ctx.k}) at class "
            f">= {t}, got {zeta_to_json(_zeta_ge(end, t, class_of))}"
        )
    if end - {(p, ctx.k)} != start:
        raise ContractViolation(
            f"remove_broadcasts({p}) changed deviations below class {t}"
        )
    return kappa


def add_broadcasts(
    ctx: ComplianceContext, p: str, kappa: list[frozenset]
) -> list[frozenset]:
    """Reverse remove_broadcasts: walk p's broadcasts back to its class slot.

    Requires the final run's deviations at p's class or later to be exactly
    (p, k); afterwards that region is empty and everything below it is
    untouched.  Both ends are machine-checked.
    """
    t = ctx.partition.class_of.get(p)
    if t is None or t >= ctx.k:
        return kappa
    class_of = ctx.partition.class_of
    start = kappa[-1]
    high = _zeta_ge(start, t, class_of)
    if high != {(p, ctx.k)}:
        raise ContractViolation(
            f"add_broadcasts({p}) needs exactly ({p}, {ctx.k}) at class {t} "
            f"or later, found {zeta_to_json(high)}"
        )
    peers = ctx.later_parties(t)
    for j in range(ctx.k - 1, t - 1, -1):
        stepped = (kappa[-1] - {(p, j + 1)}) | {(p, q) for q in peers}
        if j > t:
            stepped |= {(p, j)}
        kappa.append(stepped)
        for q in peers:
            kappa = remove_broadcasts(ctx, q, kappa)
            kappa.append(kappa[-1] - {(p, q)})
            kappa = add_broadcasts(ctx, q, kappa)
    end = kappa[-1]
    if _zeta_ge(end, t, class_of):
        raise ContractViolation(
            f"add_broadcasts({p}): residue "
            f"{zeta_to_json(_zeta_ge(end, t, class_of))} at class >= {t}"
        )
    if end != start - {(p, ctx.k)}:
        raise ContractViolation(
            f"add_broadcasts({p}) changed deviations below class {t}"
        )
    return kappa


def change_input(
    ctx: ComplianceContext, p: str, kappa: list[frozenset]
) -> list[frozenset]:
    """Extend kappa compliantly so its final run also flips p's input.

    Requires a delay-free final run; afterwards the final run is exactly the
    starting one plus (p,).  Machine-checked.
    """
    start = kappa[-1]
    delays = {d for d in start if len(d) == 2}
    if delays:
        raise ContractViolation(
            f"change_input({p}) needs a delay-free final run, found "
            f"{zeta_to_json(delays)}"
        )
    kappa = remove_broadcasts(ctx, p, kappa)
    kappa.append(kappa[-1] | {(p,)})
    kappa = add_broadcasts(ctx, p, kappa)
    if kappa[-1] != start | {(p,)}:
        raise ContractViolation(
            f"change_input({p}): final run is not the flip of its start"
        )
    return kappa


def build_full_chain(ctx: ComplianceContext) -> list[frozenset]:
    """The compliant chain from the all-zeros run to the all-ones run.

    Flips each broadcaster of classes below k and both watchers in turn,
    then flips everyone remaining in one final step: the rest never
    broadcast, so their inputs are invisible to both watchers and the last
    step stays compliant.  Starts at the empty deviation set; the final set
    flips every processor.
    """
    kappa = [frozenset()]
    for q in ctx.later_parties(1):
        kappa = change_input(ctx, q, kappa)
    final = kappa[-1] | {(p,) for p in ctx.base.processors}
    if final != kappa[-1]:
        kappa.append(final)
    return kappa


# ---------------------------------------------------------------------------
# Decision bounds and specification counting
# ---------------------------------------------------------------------------


def _grammar_zetas(ctx: ComplianceContext):
    part = ctx.partition
    specs = ctx.base.processors
    sensitive = tuple(sorted(p for p, s in specs.items() if s.input_sensitive))
    reactive = tuple(sorted(p for p, s in specs.items() if s.reactive))
    for bits, defers, pairs in _deviation_grid(
        part.class_of, sensitive, reactive, ctx.k
    ):
        zeta = {(p,) for p, b in bits.items() if b}
        zeta |= {(p, to) for (p, _), to in defers.items()}
        zeta |= set(pairs)
        yield frozenset(zeta)


def grammar_size(ctx: ComplianceContext) -> int:
    specs = ctx.base.processors
    sensitive = tuple(p for p, s in specs.items() if s.input_sensitive)
    reactive = tuple(p for p, s in specs.items() if s.reactive)
    return _grid_size(ctx.partition.class_of, sensitive, reactive, ctx.k)


def decision_bound_over(
    traces: Iterable[Trace],
    watchers: tuple[str, str],
    max_t: int,
) -> tuple[Optional[int], dict]:
    """Least t <= max_t by which both watchers decide in every given run.

    None when some run leaves a watcher undecided within max_t; the info
    dict then carries one undecided example.
    """
    worst = 0
    runs = 0
    for tr in traces:
        runs += 1
        for w in watchers:
            out = tr.outputs.get(w)
            if out is None or out[1] > max_t:
                return None, {
                    "runs": runs,
                    "undecided": w,
                    "meta": dict(tr.meta.get("adversary") or {}),
                }
            worst = max(worst, out[1])
    return worst, {"runs": runs}


def find_decision_bound(
    ctx: ComplianceContext, max_t: Optional[int] = None
) -> tuple[Optional[int], dict]:
    """Least slot by which both watchers decide in every grammar run.

    Enumerates the same run family that compute_partition fixpointed over.
    Returns (bound, info); bound is None when some run stays undecided
    within max_t (default k), or when the enumeration would exceed the
    context budget, with info saying which.
    """
    max_t = ctx.k if max_t is None else max_t
    size = grammar_size(ctx)
    if size > ctx.budget:
        return None, {"budget_exceeded": size, "budget": ctx.budget}
    worst = 0
    runs = 0
    for zeta in _grammar_zetas(ctx):
        runs += 1
        tr = expand_deviations(ctx, zeta)
        for w in ctx.watchers:
            out = tr.outputs.get(w)
            if out is None or out[1] > max_t:
                return None, {
                    "runs": runs,
                    "undecided": w,
                    "deviations": zeta_to_json(zeta),
                }
            worst = max(worst, out[1])
    return worst, {"runs": runs}


def count_t_specifications(ctx: ComplianceContext, t: int) -> int:
    """Number of distinct t-slot behaviour prefixes across the grammar runs.

    A prefix collects the inputs of every processor except the broadcasters
    of classes above t, the broadcasts that physically happen by slot t, and
    the slots at which each such processor receives those messages.  Runs
    agreeing on all three are the same t-specification.
    """
    class_of = ctx.partition.class_of
    listed = sorted(
        p for p in ctx.base.processors if class_of.get(p, 0) <= t
    )
    seen = set()
    for zeta in _grammar_zetas(ctx):
        tr = expand_deviations(ctx, zeta)
        flips = flipped_processors(zeta)
        inputs = tuple((p, 1 if p in flips else 0) for p in listed)
        bcasts = []
        hexes = set()
        for p in sorted(ctx.base.processors):
            for i, step in enumerate(tr.steps[p]):
                if step.broadcast and i + 1 <= t:
                    hx = tuple(sorted(m.hex() for m in step.broadcast))
                    bcasts.append((p, i + 1, hx))
                    hexes.update(hx)
        receipts = []
        for r in listed:
            for i, step in enumerate(tr.steps[r]):
                got = sorted(
                    m.hex() for m in (step.received or ()) if m.hex() in hexes
                )
                for hx in got:
                    receipts.append((r, hx, i + 1))
        seen.add((inputs, tuple(bcasts), tuple(sorted(receipts))))
    return len(seen)


# ---------------------------------------------------------------------------
# The demonstrator
# ---------------------------------------------------------------------------


def demonstrate_impossibility(
    base: ProtocolInstance,
    k: int,
    watchers: tuple[str, str] = ("p0", "p1"),
    q: float = 0.5,
    budget: int = 20000,
) -> dict[str, Any]:
    """Walk the full flip chain and report where the protocol first breaks.

    For a deterministic, weakly decentralised protocol that decides within k
    slots, the chain from the all-zeros run to the all-ones run is compliant,
    so the watcher outputs cannot change across any single step without
    breaking agreement; yet validity forces different outputs at the two
    ends.  The report names the first chain index at which agreement,
    validity, or decision-by-k fails.

    Declines (report["declined"] set) when a precondition fails: a
    randomizing permitter, a sampled run that broadcasts outside its own
    slot's grant, a broken class partition, or a pool without disjoint
    slot supports under the q fraction bound.  A protocol that dodges by
    never deciding gets report["undecided_by_k"] instead of a chain walk.
    """
    report: dict[str, Any] = {
        "protocol": base.meta.get("protocol"),
        "k": k,
        "declined": None,
    }

    def declined(reason: str) -> dict[str, Any]:
        report["declined"] = reason
        return report

    if base.oracle.mode != "deterministic":
        return declined(
            f"permitter {base.oracle.name!r} randomizes "
            f"(mode {base.oracle.mode!r})"
        )
    probe = run_execution(_instance_for(base, {}, {}, {}), k)
    try:
        decentralised = check_weak_decentralisation(probe, base.setting)
    except ContractViolation as e:
        return declined(str(e))
    if not decentralised:
        return declined(
            "not weakly decentralised: a sampled run broadcasts outside "
            "its own slot's grant"
        )
    try:
        ctx = build_compliance_context(
            base, k, watchers, q, budget, check_pool=False
        )
    except (ContractViolation, ValueError) as e:
        return declined(str(e))
    bound, info = find_decision_bound(ctx)
    if bound is None:
        report["undecided_by_k"] = info
        report["contradiction_found"] = False
        return report
    report["decision_bound"] = bound
    try:
        domain = [(tt, frozenset()) for tt in range(1, k + 1)]
        ok, witness = check_disjoint_supports(base.pool, domain)
        if not ok:
            return declined(
                f"pool funds identifier {witness[2]} at slots {witness[0]} "
                f"and {witness[1]}"
            )
        ok, witness = check_identifier_fraction(base.pool, q, domain)
        if not ok:
            return declined(
                f"identifier {witness[1]} holds a {witness[2]:.3f} fraction "
                f"at slot {witness[0]}, above q={q}"
            )
    except Exception as e:  # pool probing is part of the precondition
        return declined(str(e))

    chain = build_full_chain(ctx)
    compliant, why = is_compliant(ctx, chain)
    sensitive = sorted(
        p for p, s in base.processors.items() if s.input_sensitive
    )
    elements = []
    first_break = None
    for idx, zeta in enumerate(chain):
        tr = expand_deviations(ctx, zeta)
        outs = {w: tr.outputs.get(w) for w in ctx.watchers}
        kind = None
        if any(o is None or o[1] > k for o in outs.values()):
            kind = "no-output"
        elif len({o[0] for o in outs.values()}) > 1:
            kind = "agreement"
        else:
            flips = flipped_processors(zeta)
            bits = {1 if p in flips else 0 for p in sensitive}
            if len(bits) == 1:
                z = bits.pop()
                if any(o[0] != z for o in outs.values()):
                    kind = "validity"
        row = {
            "deviations": zeta_to_json(zeta),
            "outputs": {w: (list(o) if o else None) for w, o in outs.items()},
            "break": kind,
        }
        elements.append(row)
        if kind is not None and first_break is None:
            first_break = dict(row, index=idx)
    report.update(
        {
            "chain_length": len(chain),
            "compliant": compliant,
            "compliance_failure": why,
            "start_outputs": elements[0]["outputs"],
            "end_outputs": elements[-1]["outputs"],
            "elements": elements,
            "first_break": first_break,
            "contradiction_found": first_break is not None,
        }
    )
    return report
