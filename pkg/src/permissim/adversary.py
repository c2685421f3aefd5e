"""Adversary strategies and executable attacks.

Three families live here.  Delay-only adversaries run the honest machine
but sit on instructed broadcasts; they are expressed as delay schedules and
are what the relay-protocol robustness sweeps enumerate.  Simulation
adversaries run other processors' honest machines inside one controlled
processor with reversed inputs, which splits any protocol that lets an
unauthenticated majority be forged.  The eclipse construction builds three
instances of one partially synchronous protocol whose resource pools and
pre-stabilization delays make pairs of runs look identical to a chosen
processor, forcing disagreement in the combined instance.

All of the attacks are judged with the same indistinguishability checker:
two runs are indistinguishable for p when p's inputs and its per-slot
(received, permitted) observations match byte for byte.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, replace
from typing import Any, Iterable, Iterator, Optional, Sequence

from .core import Identifier, ProcessorSpec, base_value_message
from .protocols.simple import build_echo_bb, build_naive_majority, voter_spec
from .scheduler import (
    AdversaryStrategy,
    ProtocolInstance,
    TimingRule,
    Trace,
    run_execution,
)

# ---------------------------------------------------------------------------
# Indistinguishability
# ---------------------------------------------------------------------------


def indistinguishable_for(
    trace_a: Trace, trace_b: Trace, pid: str, through: Optional[int] = None
) -> bool:
    """Exact-view equality: pid's inputs plus per-slot received/permitted
    observations agree byte for byte up to `through` (default: full run)."""
    return trace_a.view_bytes(pid, through) == trace_b.view_bytes(pid, through)


def indistinguishable_distributions(
    traces_a: Iterable[Trace],
    traces_b: Iterable[Trace],
    pid: str,
    through: Optional[int] = None,
) -> bool:
    """Empirical-distribution equality of pid's views over matched seed
    sweeps.  Per-seed exact equality implies this; it also accepts sweeps
    whose views agree only up to seed permutation."""
    ca = Counter(t.view_bytes(pid, through) for t in traces_a)
    cb = Counter(t.view_bytes(pid, through) for t in traces_b)
    return ca == cb


# ---------------------------------------------------------------------------
# Simulation hub: one processor running other processors' machines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimHubState:
    slot: int
    machines: dict  # simulated pid -> that machine's current state


def simulation_hub_spec(
    pid: str,
    identifier: Identifier,
    machines: dict[str, ProcessorSpec],
    fake_inputs: dict[str, tuple],
) -> ProcessorSpec:
    """A controlled processor that ignores its own input and instead runs
    the given honest machines, broadcasting everything they would broadcast.

    Every machine sees the hub's own receipts and permission grants.  The
    machines' requests are merged; structurally identical requests collapse
    to one so the hub stays legal in a single-permitter setting.
    """
    order = sorted(machines)

    def init(inputs):
        return SimHubState(
            0,
            {j: machines[j].init(tuple(fake_inputs.get(j, ()))) for j in order},
        )

    def transition(state, received, granted):
        broadcasts: list = []
        requests: list = []
        seen_keys: set = set()
        next_states = {}
        for j in order:
            b, r, st = machines[j].transition(state.machines[j], received, granted)
            broadcasts.extend(b)
            next_states[j] = st
            for req in r:
                key = req.key()
                if key not in seen_keys:
                    seen_keys.add(key)
                    requests.append(req)
        return tuple(broadcasts), tuple(requests), SimHubState(state.slot + 1, next_states)

    return ProcessorSpec(
        pid, identifier, init, transition, input_sensitive=False,
    )


# ---------------------------------------------------------------------------
# Simulation attack, permissioned flavour
# ---------------------------------------------------------------------------


def build_sim_permissioned(
    target: int,
    inputs: Sequence[int],
    n: int = 3,
    rounds: int = 1,
    delta: Optional[int] = None,
    seed: int = 0,
) -> ProtocolInstance:
    """Naive-majority under the mirror adversary, permissioned setting.

    p0 is controlled: it simulates the honest machine of every non-target
    processor with its input reversed, so the target sees both a real and a
    forged vote from each of them and falls back to its own input.  Every
    delivery to a non-target honest processor is stretched past the decision
    slot, so each of those decides on its own input alone.  Disagreement
    follows whenever the target and some other processor start apart.
    """
    if not 1 <= target <= n - 1:
        raise ValueError("target must name one of the honest processors")
    vals = tuple(int(b) for b in inputs)
    if len(vals) != n - 1 or any(b not in (0, 1) for b in vals):
        raise ValueError("need one binary input per honest processor")
    late = rounds + 1  # one past the on-time delivery of the last vote
    if delta is None:
        delta = late
    if delta < late:
        raise ValueError("delay bound too small to stretch deliveries past the decision")

    base = build_naive_majority(
        n=n, values=[0, *vals], permissioned=True,
        rounds=rounds, delta=delta, seed=seed, q=1.0 / n,
    )
    pids = [f"p{i}" for i in range(n)]
    tgt = f"p{target}"
    machines = {}
    fakes = {}
    for j in range(1, n):
        p = f"p{j}"
        if p == tgt:
            continue
        machines[p] = voter_spec(p, Identifier(p), rounds)
        fakes[p] = (base_value_message(1 - vals[j - 1]),)
    hub = simulation_hub_spec("p0", Identifier("p0"), machines, fakes)
    adversary = AdversaryStrategy(
        pids=frozenset({"p0"}),
        override_specs={"p0": hub},
        name="sim-permissioned",
    )
    pair = {}
    for victim in pids[1:]:
        if victim == tgt:
            continue
        for sender in pids:
            if sender != victim:
                pair[(sender, victim)] = late
    timing = TimingRule(base.timing.regime, pair_step=pair)
    meta = dict(base.meta)
    meta.update({"attack": "sim-permissioned", "target": tgt})
    return replace(base, adversary=adversary, timing=timing, meta=meta)


def run_sim_permissioned_attack(
    seeds: int | Sequence[int] = 1000,
    epsilon: float = 0.1,
    n: int = 3,
    target: int = 1,
    inputs: Sequence[int] = (0, 1),
    rounds: int = 1,
) -> dict[str, Any]:
    """Demonstrates the permissioned simulation attack across seeds.

    Checks, per seed: the target's view is byte-identical between the run
    on `inputs` and the run with one non-target input flipped (the coupled
    pair the impossibility argument rides on), and the honest outputs
    disagree.  Passes when view equality holds on every seed and the
    disagreement frequency clears 1 - 2*epsilon.
    """
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    vals = tuple(int(b) for b in inputs)
    other = next(j for j in range(1, n) if j != target)
    flipped = list(vals)
    flipped[other - 1] ^= 1
    tgt = f"p{target}"
    honest = [f"p{j}" for j in range(1, n)]

    views_equal = 0
    disagreements = 0
    for s in seed_list:
        ta = run_execution(
            build_sim_permissioned(target, vals, n=n, rounds=rounds, seed=s),
            rounds + 2,
        )
        tb = run_execution(
            build_sim_permissioned(target, flipped, n=n, rounds=rounds, seed=s),
            rounds + 2,
        )
        if indistinguishable_for(ta, tb, tgt):
            views_equal += 1
        outs = {ta.outputs[p][0] for p in honest if p in ta.outputs}
        if len(outs) > 1:
            disagreements += 1
    total = len(seed_list)
    freq = disagreements / total if total else 0.0
    return {
        "attack": "sim-permissioned",
        "params": {"n": n, "target": target, "inputs": list(vals), "rounds": rounds},
        "seeds": total,
        "epsilon": epsilon,
        "target_views_identical": views_equal == total,
        "disagreement_frequency": freq,
        "threshold": 1.0 - 2.0 * epsilon,
        "pass": views_equal == total and freq >= 1.0 - 2.0 * epsilon,
    }


# ---------------------------------------------------------------------------
# Simulation attack, permissionless flavour
# ---------------------------------------------------------------------------


def build_sim_permissionless(
    inputs: Sequence[int] = (0, 1),
    balances: Sequence[float] = (1.0, 1.0, 0.0),
    rounds: int = 1,
    seed: int = 0,
) -> ProtocolInstance:
    """Naive-majority on three processors where balance does the splitting.

    p0 and p1 hold the same balance and p2 holds none, so p0 can mirror
    p1's machine with the reversed input and earn the same permissions; the
    forged vote ties p1's tally down to the default while p2, voiceless and
    eclipsed by late deliveries, decides on its own input.  The adversary
    holds exactly half the resource, q = 1/2.
    """
    vals = tuple(int(b) for b in inputs)
    if len(vals) != 2 or any(b not in (0, 1) for b in vals):
        raise ValueError("need binary inputs for p1 and p2")
    bals = tuple(float(b) for b in balances)
    if len(bals) != 3 or bals[0] != bals[1] or bals[0] <= 0 or bals[2] != 0:
        raise ValueError("the mirror needs equal p0/p1 balances and a zero-balance p2")
    late = rounds + 1
    base = build_naive_majority(
        n=3, values=[0, *vals], balances=list(bals), permissioned=False,
        rounds=rounds, delta=late, seed=seed, q=0.5,
    )
    machines = {"p1": voter_spec("p1", Identifier("p1"), rounds)}
    fakes = {"p1": (base_value_message(1 - vals[0]),)}
    hub = simulation_hub_spec("p0", Identifier("p0"), machines, fakes)
    adversary = AdversaryStrategy(
        pids=frozenset({"p0"}),
        override_specs={"p0": hub},
        name="sim-permissionless",
    )
    pair = {("p0", "p2"): late, ("p1", "p2"): late}
    timing = TimingRule(base.timing.regime, pair_step=pair)
    meta = dict(base.meta)
    meta.update({"attack": "sim-permissionless"})
    return replace(base, adversary=adversary, timing=timing, meta=meta)


def run_sim_permissionless_attack(
    seeds: int | Sequence[int] = 1000,
    epsilon: float = 0.1,
    inputs: Sequence[int] = (0, 1),
    rounds: int = 1,
) -> dict[str, Any]:
    """Demonstrates the balance-mirror attack across seeds.

    Two exact view checks per seed: p2 cannot tell the run from one where
    p1's input is flipped, and p1 cannot tell it from one where p2's input
    is flipped.  Passes when both hold every seed and p1/p2 disagree with
    frequency at least 1 - 2*epsilon.
    """
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    vals = tuple(int(b) for b in inputs)
    flip_p1 = (1 - vals[0], vals[1])
    flip_p2 = (vals[0], 1 - vals[1])
    horizon = rounds + 2

    p2_blind = 0
    p1_blind = 0
    disagreements = 0
    for s in seed_list:
        ta = run_execution(build_sim_permissionless(vals, rounds=rounds, seed=s), horizon)
        tb = run_execution(build_sim_permissionless(flip_p1, rounds=rounds, seed=s), horizon)
        tc = run_execution(build_sim_permissionless(flip_p2, rounds=rounds, seed=s), horizon)
        if indistinguishable_for(ta, tb, "p2"):
            p2_blind += 1
        if indistinguishable_for(ta, tc, "p1"):
            p1_blind += 1
        if ta.outputs["p1"][0] != ta.outputs["p2"][0]:
            disagreements += 1
    total = len(seed_list)
    freq = disagreements / total if total else 0.0
    return {
        "attack": "sim-permissionless",
        "params": {"inputs": list(vals), "rounds": rounds},
        "seeds": total,
        "epsilon": epsilon,
        "p2_views_identical": p2_blind == total,
        "p1_views_identical": p1_blind == total,
        "disagreement_frequency": freq,
        "threshold": 1.0 - 2.0 * epsilon,
        "pass": (
            p2_blind == total and p1_blind == total and freq >= 1.0 - 2.0 * epsilon
        ),
    }


# ---------------------------------------------------------------------------
# Eclipse triple
# ---------------------------------------------------------------------------


def build_eclipse_instances(
    unit: float = 1.0,
    delta: int = 1,
    stabilization: int = 50,
    t0: int = 10,
    rate: float = 0.5,
    step: int = 1,
    seed: int = 0,
) -> tuple[ProtocolInstance, ProtocolInstance, ProtocolInstance]:
    """Three pools, one protocol, one seed: the eclipse construction.

    The combined instance funds both identifiers but defers every pre
    stabilization broadcast between p0 and p1; the two solo instances fund
    only one identifier each, with ordinary minimal delays (`step`, the
    knob the construction leaves arbitrary).  Under the shared seed, p0
    cannot tell the combined instance from its solo one until stabilization,
    and likewise p1, so in the combined instance they decide apart.
    """
    common = dict(
        bits=(0, 1), rate=rate, t0=t0, stabilization=stabilization,
        delta=delta, unit=unit, seed=seed,
    )
    both = build_echo_bb(funded=(True, True), defer_cross=True, **common)
    only_p0 = build_echo_bb(funded=(True, False), defer_cross=False, step=step, **common)
    only_p1 = build_echo_bb(funded=(False, True), defer_cross=False, step=step, **common)
    return both, only_p0, only_p1


def run_eclipse_attack(
    seeds: int | Sequence[int] = 1000,
    epsilon: float = 0.1,
    unit: float = 1.0,
    delta: int = 1,
    stabilization: int = 50,
    t0: int = 10,
    rate: float = 0.5,
    step: int = 1,
) -> dict[str, Any]:
    """Runs the eclipse triple across seeds.

    Per seed: byte-equal p0 views between the combined and p0-only runs
    through stabilization, same for p1; the solo runs decide by t0; the
    combined run has p0 output 0 and p1 output 1 by t0.  Passes when the
    view equalities hold every seed, solo decision frequency clears
    1 - epsilon, and the split-decision frequency clears 1 - 2*epsilon.
    """
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    horizon = stabilization

    views_equal = 0
    solo_decided = 0
    split = 0
    for s in seed_list:
        both, only_p0, only_p1 = build_eclipse_instances(
            unit=unit, delta=delta, stabilization=stabilization,
            t0=t0, rate=rate, step=step, seed=s,
        )
        tr0 = run_execution(both, horizon)
        tr1 = run_execution(only_p0, horizon)
        tr2 = run_execution(only_p1, horizon)
        if indistinguishable_for(tr0, tr1, "p0", through=stabilization) and \
                indistinguishable_for(tr0, tr2, "p1", through=stabilization):
            views_equal += 1
        if all(
            pid in tr.outputs and tr.outputs[pid][1] <= t0
            for tr in (tr1, tr2) for pid in ("p0", "p1")
        ):
            solo_decided += 1
        o0 = tr0.outputs.get("p0")
        o1 = tr0.outputs.get("p1")
        if o0 and o1 and o0[0] == 0 and o1[0] == 1 and o0[1] <= t0 and o1[1] <= t0:
            split += 1
    total = len(seed_list)
    split_freq = split / total if total else 0.0
    solo_freq = solo_decided / total if total else 0.0
    return {
        "attack": "eclipse",
        "params": {
            "unit": unit, "delta": delta, "stabilization": stabilization,
            "t0": t0, "rate": rate, "step": step,
        },
        "seeds": total,
        "epsilon": epsilon,
        "views_identical_through_stabilization": views_equal == total,
        "solo_decided_frequency": solo_freq,
        "split_decision_frequency": split_freq,
        "threshold": 1.0 - 2.0 * epsilon,
        "pass": (
            views_equal == total
            and solo_freq > 1.0 - epsilon
            and split_freq > 1.0 - 2.0 * epsilon
        ),
    }


# ---------------------------------------------------------------------------
# Delay-only adversaries
# ---------------------------------------------------------------------------


def delay_menus(broadcast_slots: Sequence[int], horizon: int) -> Iterator[dict[int, int]]:
    """Every per-slot deferral menu over the given instructed slots.

    Each slot independently either ships on time or defers all of its
    instructed broadcasts to one later slot within the horizon; a menu maps
    only the deferred slots.  The first menu yielded is the empty (fully
    on-time) one.
    """
    choices = [(None, *range(t + 1, horizon + 1)) for t in broadcast_slots]
    for combo in itertools.product(*choices):
        yield {t: c for t, c in zip(broadcast_slots, combo) if c is not None}


def delay_adversary(
    menus_by_pid: dict[str, dict[int, int]], name: str = "delay-schedule"
) -> AdversaryStrategy:
    """An adversary that runs honest machines but defers broadcasts per the
    given per-processor menus."""
    schedule = {
        (pid, t): release
        for pid, menu in menus_by_pid.items()
        for t, release in menu.items()
    }
    return AdversaryStrategy(
        pids=frozenset(menus_by_pid), delay_schedule=schedule, name=name
    )


def run_delay_schedule_attack(
    seeds: int | Sequence[int] = 1,
    epsilon: float = 0.0,
    insiders: int = 3,
    outsiders: int = 1,
    balances: Optional[Sequence[float]] = None,
    q: float = 0.5,
    delta: int = 2,
    values: int = 1,
    faulty: Sequence[str] = ("ins0",),
    menu: Optional[dict[int, int]] = None,
    menu_index: Optional[int] = None,
) -> dict[str, Any]:
    """Probes the relay protocol with a delay-only adversary.

    The named faulty processors run the honest machine but defer their
    instructed broadcasts per `menu` (or the `menu_index`-th menu of the
    exhaustive enumeration).  This attack is expected to fail: the result
    passes when agreement, validity, and both relay bounds survive on every
    seed.  Seeds matter only through inputs here; the run is deterministic.
    """
    from .protocols.pos_bb import build_pos_bb, check_relay_invariants, round_time

    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    probe = build_pos_bb(
        insiders=insiders, outsiders=outsiders, balances=balances,
        q=q, delta=delta, values=values,
    )
    k = probe.meta["k"]
    horizon = probe.meta["horizon"]
    slots = [round_time(i, delta) for i in range(k + 1)]
    if menu is None:
        all_menus = list(delay_menus(slots, horizon))
        menu = all_menus[menu_index if menu_index is not None else 0]
    bad = [p for p in faulty if p not in probe.processors]
    if bad:
        raise ValueError(f"faulty names unknown processors: {bad}")
    adversary = delay_adversary({p: dict(menu) for p in faulty})

    held = 0
    first_violation = None
    for s in seed_list:
        inst = build_pos_bb(
            insiders=insiders, outsiders=outsiders, balances=balances,
            q=q, delta=delta, values=values, seed=s,
        )
        inst = replace(inst, adversary=adversary)
        trace = run_execution(inst, horizon)
        outs = {p: trace.outputs[p][0] for p in trace.pids if p in trace.outputs}
        agreed = len(set(outs.values())) == 1 and len(outs) == len(trace.pids)
        valid = all(v == values for v in outs.values()) if isinstance(values, int) else True
        relay = check_relay_invariants(
            trace, inst.meta["ustar"], inst.meta["insiders"], delta, k,
            faulty=frozenset(faulty),
        )
        if agreed and valid and not relay:
            held += 1
        elif first_violation is None:
            first_violation = {
                "seed": s, "outputs": outs, "relay_violations": relay[:3],
            }
    total = len(seed_list)
    freq = held / total if total else 0.0
    return {
        "attack": "delay-schedule",
        "params": {
            "insiders": insiders, "outsiders": outsiders, "q": q, "delta": delta,
            "values": values, "faulty": list(faulty),
            "menu": {str(t): r for t, r in sorted(menu.items())},
        },
        "seeds": total,
        "epsilon": epsilon,
        "held_frequency": freq,
        "first_violation": first_violation,
        "pass": held == total,
    }


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


ATTACKS = {
    "sim-permissioned": run_sim_permissioned_attack,
    "sim-permissionless": run_sim_permissionless_attack,
    "eclipse": run_eclipse_attack,
    "delay-schedule": run_delay_schedule_attack,
}


def get_attack(name: str):
    if name not in ATTACKS:
        known = ", ".join(sorted(ATTACKS))
        raise ValueError(f"unknown attack {name!r}; known attacks: {known}")
    return ATTACKS[name]
