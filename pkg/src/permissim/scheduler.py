"""Timeslot scheduler: assembles instances and runs them to traces.

A protocol instance fixes (1) the processor roster and its inputs, (2) the
adversary, (3) the timing rule, (4) the resource pool, and (5) the run seed
that freezes the permitter's randomness.  run_execution is the reference
semantics for one run:

* slot t starts with each processor receiving this slot's deliveries M and
  the permission M* earned by the requests it made at slot t-1;
* the processor's transition yields broadcasts, new requests, and a state;
* broadcasts must be permitted (and in the authenticated setting must pass
  the broadcast filter); they are scheduled for delivery to every other
  processor per the timing rule, and enter the sender's own message state
  directly;
* requests are answered by the permitter oracle between slots.

Adversarial processors may run replacement state machines and may hold
back instructed broadcasts to a later slot (all of one slot's messages
move together).  Everything else about them is validated like any other
processor, except that their requests may draw on messages known to any
controlled processor.
"""

from __future__ import annotations

import dataclasses
import io
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from . import codec
from .core import (
    ContractViolation,
    EMPTY_PERMISSION,
    Identifier,
    Message,
    PermissionSet,
    PermittedAccumulator,
    ProcessorSpec,
    Request,
    SignedPairIndex,
    decode_message,
    union_permission,
)
from .permitters import PermitterOracle
from .resources import NetworkRegime, ResourcePool, SettingFlags, validate_pool, check_q_bounded

_EMPTY_SET: frozenset[Message] = frozenset()


# ---------------------------------------------------------------------------
# Timing rules
# ---------------------------------------------------------------------------


@dataclass
class TimingRule:
    """A total delivery rule within a network regime.

    Delivery offset defaults to `step` slots after broadcast; specific
    sender/receiver pairs may use a different offset via pair_step.  Under
    partial synchrony, pairs listed in defer_pairs have every pre
    stabilization broadcast delivered at the latest allowed slot
    (stabilization + delta), which keeps the pair mutually silent until
    after stabilization.
    """

    regime: NetworkRegime
    step: int = 1
    pair_step: dict[tuple[str, str], int] = field(default_factory=dict)
    defer_pairs: frozenset[tuple[str, str]] = frozenset()

    def delivery_slot(self, sender: str, receiver: str, slot: int) -> int:
        if self.defer_pairs and (sender, receiver) in self.defer_pairs:
            if self.regime.kind == "partial" and slot <= self.regime.stabilization:
                return self.regime.deadline(slot)
        return slot + self.pair_step.get((sender, receiver), self.step)

    def descriptor(self) -> Any:
        return [
            self.regime.descriptor(),
            self.step,
            sorted([s, r, d] for (s, r), d in self.pair_step.items()),
            sorted([s, r] for (s, r) in self.defer_pairs),
        ]


def validate_timing_rule(
    rule: TimingRule, pids: Iterable[str], horizon: int
) -> bool:
    """Check every (sender, receiver, slot) delivery against the regime
    window.  Raises ContractViolation naming the first bad tuple."""
    pids = sorted(pids)
    for s in pids:
        for r in pids:
            if s == r:
                continue
            for t in range(1, horizon + 1):
                d = rule.delivery_slot(s, r, t)
                if not rule.regime.window_ok(t, d):
                    raise ContractViolation(
                        f"delivery ({s}->{r}, broadcast t={t}, receive t={d}) "
                        f"outside the {rule.regime.kind} window"
                    )
    return True


# ---------------------------------------------------------------------------
# Adversary and instance containers
# ---------------------------------------------------------------------------


@dataclass
class AdversaryStrategy:
    """A static set of controlled processors plus their behaviour.

    override_specs replaces the state machine of a controlled processor.
    delay_schedule maps (pid, instructed slot) to the slot at which that
    slot's instructed broadcasts are actually sent (None: never).  A
    processor with only delay entries still runs the honest machine.
    """

    pids: frozenset[str]
    override_specs: dict[str, ProcessorSpec] = field(default_factory=dict)
    delay_schedule: dict[tuple[str, int], Optional[int]] = field(default_factory=dict)
    name: str = "adversary"

    def __post_init__(self):
        self.pids = frozenset(self.pids)
        for pid in self.override_specs:
            if pid not in self.pids:
                raise ContractViolation(f"override for uncontrolled processor {pid}")
        for (pid, slot), release in self.delay_schedule.items():
            if pid not in self.pids:
                raise ContractViolation(f"delay entry for uncontrolled processor {pid}")
            if release is not None and release <= slot:
                raise ContractViolation(
                    f"delay for {pid}@{slot} must release strictly later"
                )

    def descriptor(self) -> Any:
        return [
            self.name,
            sorted(self.pids),
            sorted(
                [p, t, -1 if rel is None else rel]
                for (p, t), rel in self.delay_schedule.items()
            ),
            sorted(self.override_specs),
        ]


@dataclass
class ProtocolInstance:
    """Everything run_execution needs for one run."""

    processors: dict[str, ProcessorSpec]
    inputs: dict[str, tuple[Message, ...]]
    pool: ResourcePool
    oracle: PermitterOracle
    setting: SettingFlags
    timing: TimingRule
    seed: int = 0
    adversary: Optional[AdversaryStrategy] = None
    q: Optional[float] = None
    meta: dict[str, Any] = field(default_factory=dict)

    def adversary_pids(self) -> frozenset[str]:
        return self.adversary.pids if self.adversary else frozenset()


def validate_instance(instance: ProtocolInstance) -> None:
    """Static checks before a run: roster sanity, pool conditions, declared
    q-bound, and regime agreement between setting and timing rule."""
    seen: set[Identifier] = set()
    for pid, spec in instance.processors.items():
        if spec.pid != pid:
            raise ContractViolation(f"processor key {pid} does not match spec {spec.pid}")
        if spec.identifier in seen:
            raise ContractViolation(f"identifier {spec.identifier.name} owned twice")
        seen.add(spec.identifier)
    for pid in instance.inputs:
        if pid not in instance.processors:
            raise ContractViolation(f"inputs for unknown processor {pid}")
    adv = instance.adversary
    if adv is not None and not adv.pids <= set(instance.processors):
        raise ContractViolation("adversary controls unknown processors")
    if instance.timing.regime != instance.setting.regime:
        raise ContractViolation("timing rule regime differs from setting regime")
    owned = [spec.identifier for spec in instance.processors.values()]
    alpha = instance.setting.alpha if not instance.setting.sized else None
    validate_pool(instance.pool, owned, alpha=alpha)
    if instance.q is not None and adv is not None and not instance.setting.permissioned:
        adv_ids = [instance.processors[p].identifier for p in adv.pids]
        ok, witness = check_q_bounded(
            instance.pool, adv_ids, instance.q, instance.pool.domain()
        )
        if not ok:
            raise ContractViolation(f"adversary exceeds q bound at {witness}")
    if instance.q is not None and adv is not None and instance.setting.permissioned:
        if len(adv.pids) > instance.q * len(instance.processors):
            raise ContractViolation("adversary exceeds permissioned q bound")


# ---------------------------------------------------------------------------
# Traces
# ---------------------------------------------------------------------------


@dataclass
class TraceStep:
    """What one processor saw and did at one timeslot."""

    received: Optional[tuple[Message, ...]]
    granted: Optional[str]  # canonical descriptor of this slot's permission
    broadcast: tuple[Message, ...]
    requests: Optional[tuple[Request, ...]]
    state: Any


@dataclass
class Trace:
    horizon: int
    pids: tuple[str, ...]
    inputs: dict[str, tuple[Message, ...]]
    steps: dict[str, list[TraceStep]]
    outputs: dict[str, tuple[int, int]]  # pid -> (value, slot)
    meta: dict[str, Any] = field(default_factory=dict)

    def step_at(self, pid: str, slot: int) -> TraceStep:
        return self.steps[pid][slot - 1]

    def view(self, pid: str, through: Optional[int] = None) -> Any:
        """The observation record that indistinguishability compares: the
        processor's inputs plus its per-slot (M, M*) sequence."""
        limit = self.horizon if through is None else min(through, self.horizon)
        slots = []
        for step in self.steps[pid][:limit]:
            if step.received is None:
                raise ContractViolation("view requested from a light-mode trace")
            slots.append([[m.hex() for m in step.received], step.granted])
        return [sorted(m.hex() for m in self.inputs.get(pid, ())), slots]

    def view_bytes(self, pid: str, through: Optional[int] = None) -> bytes:
        return codec.canon_json(self.view(pid, through)).encode()

    def broadcast_events(self) -> Iterable[tuple[str, int, Message]]:
        for pid in self.pids:
            for i, step in enumerate(self.steps[pid]):
                for m in step.broadcast:
                    yield pid, i + 1, m

    def to_jsonl(self) -> str:
        """Serialize with stable field order: header, steps, outputs."""
        out = io.StringIO()
        header = {
            "kind": "header",
            "horizon": self.horizon,
            "pids": list(self.pids),
            "inputs": {p: sorted(m.hex() for m in ms) for p, ms in sorted(self.inputs.items())},
            "meta": codec._listify(self.meta),
        }
        out.write(codec.canon_json(header) + "\n")
        for t in range(1, self.horizon + 1):
            for pid in self.pids:
                step = self.step_at(pid, t)
                rec = {
                    "kind": "step",
                    "t": t,
                    "p": pid,
                    "recv": None if step.received is None else sorted(m.hex() for m in step.received),
                    "grant": step.granted,
                    "bcast": sorted(m.hex() for m in step.broadcast),
                    "req": None if step.requests is None else sorted(r.key() for r in step.requests),
                    "state": state_tree(step.state),
                }
                out.write(codec.canon_json(rec) + "\n")
        footer = {
            "kind": "outputs",
            "outputs": {p: list(v) for p, v in sorted(self.outputs.items())},
        }
        out.write(codec.canon_json(footer) + "\n")
        return out.getvalue()

    @staticmethod
    def from_jsonl(text: str) -> "Trace":
        """Parse a serialized trace back into a structural Trace (states and
        requests come back as opaque trees; messages are decoded exactly)."""
        header = None
        steps: dict[str, list[TraceStep]] = {}
        outputs: dict[str, tuple[int, int]] = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec["kind"] == "header":
                header = rec
                steps = {p: [] for p in rec["pids"]}
            elif rec["kind"] == "step":
                msgs = tuple(decode_message(bytes.fromhex(h)) for h in (rec["recv"] or []))
                bcast = tuple(decode_message(bytes.fromhex(h)) for h in rec["bcast"])
                steps[rec["p"]].append(
                    TraceStep(
                        received=None if rec["recv"] is None else msgs,
                        granted=rec["grant"],
                        broadcast=bcast,
                        requests=None,
                        state=rec["state"],
                    )
                )
            elif rec["kind"] == "outputs":
                outputs = {p: (v[0], v[1]) for p, v in rec["outputs"].items()}
        if header is None:
            raise ValueError("trace has no header line")
        inputs = {
            p: tuple(decode_message(bytes.fromhex(h)) for h in hs)
            for p, hs in header["inputs"].items()
        }
        return Trace(
            horizon=header["horizon"],
            pids=tuple(header["pids"]),
            inputs=inputs,
            steps=steps,
            outputs=outputs,
            meta={"parsed": True, "raw_meta": header.get("meta")},
        )


def state_tree(value: Any) -> Any:
    """Canonical JSON-safe rendering of a protocol state."""
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, Message):
        return ["msg", value.hex()]
    if isinstance(value, Identifier):
        return ["ident", value.name, value.is_general]
    if isinstance(value, (tuple, list)):
        return [state_tree(v) for v in value]
    if isinstance(value, (set, frozenset)):
        return ["set", sorted(codec.canon_json(state_tree(v)) for v in value)]
    if isinstance(value, dict):
        return ["dict", sorted(
            [codec.canon_json(state_tree(k)), state_tree(v)] for k, v in value.items()
        )]
    if dataclasses.is_dataclass(value):
        return [
            type(value).__name__,
            ["dict", sorted(
                [codec.canon_json(f.name), state_tree(getattr(value, f.name))]
                for f in dataclasses.fields(value)
            )],
        ]
    return ["repr", repr(value)]


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def run_execution(
    instance: ProtocolInstance,
    horizon: int,
    record: str = "full",
    observer: Optional[Callable[[int, str, frozenset, frozenset, Any, Any], None]] = None,
    validate: bool = True,
) -> Trace:
    """Run one instance for `horizon` timeslots and return its trace.

    record="light" skips per-step received/request recording (states and
    broadcasts are always kept); use it for wide Monte Carlo sweeps where
    only outputs or states are inspected.

    `observer(t, pid, received, instructed, new_state, granted)` is called
    once per processor per slot with the broadcast set as instructed, before
    any adversarial deferral; the trace records the physical set instead.
    """
    if validate:
        validate_instance(instance)
    setting = instance.setting
    full = record == "full"
    adv = instance.adversary
    adv_pids = instance.adversary_pids()
    specs: dict[str, ProcessorSpec] = dict(instance.processors)
    if adv:
        specs.update(adv.override_specs)
    pids = sorted(specs)

    states: dict[str, Any] = {}
    permitted: dict[str, PermittedAccumulator] = {}
    message_state: dict[str, set[Message]] = {}
    pair_index: dict[str, SignedPairIndex] = {}
    pending_grant: dict[str, list[PermissionSet]] = {p: [] for p in pids}
    pending_delivery: dict[str, dict[int, set[Message]]] = {p: {} for p in pids}
    deferred: dict[str, dict[int, list[Message]]] = {p: {} for p in pids}
    outputs: dict[str, tuple[int, int]] = {}
    steps: dict[str, list[TraceStep]] = {p: [] for p in pids}

    for pid in pids:
        spec = specs[pid]
        inputs = instance.inputs.get(pid, ())
        states[pid] = spec.init(tuple(inputs))
        acc = PermittedAccumulator()
        if setting.permissioned:
            acc.has_all = True
        permitted[pid] = acc
        message_state[pid] = set(inputs)
        if setting.authenticated:
            idx = SignedPairIndex()
            for m in inputs:
                idx.add(m)
            pair_index[pid] = idx
        v = spec.output(states[pid])
        if v is not None:
            outputs[pid] = (v, 0)

    for t in range(1, horizon + 1):
        delivered = {pid: pending_delivery[pid].pop(t, None) for pid in pids}
        granted_now = {}
        for pid in pids:
            grants = pending_grant[pid]
            granted_now[pid] = union_permission(grants) if grants else EMPTY_PERMISSION
            pending_grant[pid] = []

        for pid in pids:
            spec = specs[pid]
            raw = delivered[pid]
            received = _EMPTY_SET if raw is None else frozenset(raw)
            granted = granted_now[pid]
            acc = permitted[pid]
            acc.add(granted)
            if raw:
                message_state[pid].update(received)
                if setting.authenticated:
                    idx = pair_index[pid]
                    for m in received:
                        idx.add(m)

            broadcast, requests, new_state = spec.transition(states[pid], received, granted)
            broadcast = frozenset(broadcast)
            requests = tuple(requests)
            states[pid] = new_state

            # permission discipline at instruction time
            for m in broadcast:
                if not acc.allows(m):
                    raise ContractViolation(
                        f"{pid}@t={t}: broadcast of unpermitted message {m!r}"
                    )
                if setting.authenticated and not pair_index[pid].filter_ok(spec.identifier, m):
                    raise ContractViolation(
                        f"{pid}@t={t}: broadcast fails the authenticated filter: {m!r}"
                    )

            # adversarial deferral: this slot's instructed broadcasts may move
            physical = broadcast
            if adv and (pid, t) in adv.delay_schedule and broadcast:
                release = adv.delay_schedule[(pid, t)]
                physical = frozenset()
                if release is not None and release <= horizon:
                    deferred[pid].setdefault(release, []).extend(broadcast)
            held = deferred[pid].pop(t, None)
            if held:
                physical = physical | frozenset(held)

            _validate_requests(instance, setting, pid, t, requests,
                               message_state, permitted, adv_pids)

            # answer requests; responses arrive next slot
            if requests and t < horizon:
                responses = pending_grant[pid]
                ident = spec.identifier
                for req in requests:
                    bslot = req.slot if setting.timed else t
                    balance = instance.pool.balance(ident, bslot, req.messages)
                    resp = instance.oracle.respond(
                        instance.seed, pid, ident, t, req, balance
                    )
                    responses.append(resp.permission)

            if physical:
                message_state[pid].update(physical)
                for qid in pids:
                    if qid == pid:
                        continue
                    dslot = instance.timing.delivery_slot(pid, qid, t)
                    if t < dslot <= horizon:
                        pending_delivery[qid].setdefault(dslot, set()).update(physical)
                    elif dslot <= t:
                        raise ContractViolation(
                            f"timing rule delivers {pid}->{qid} no later than broadcast"
                        )

            if pid not in outputs:
                v = spec.output(new_state)
                if v is not None:
                    outputs[pid] = (v, t)

            if observer is not None:
                observer(t, pid, received, broadcast, new_state, granted)

            steps[pid].append(
                TraceStep(
                    received=tuple(sorted(received)) if full else None,
                    granted=codec.canon_json(granted.descriptor()) if full else None,
                    broadcast=tuple(sorted(physical)),
                    requests=tuple(sorted(requests, key=lambda r: r.key())) if full else None,
                    state=new_state,
                )
            )

    meta = {
        "seed": instance.seed,
        "setting": instance.setting.descriptor(),
        "timing": instance.timing.descriptor(),
        "pool": instance.pool.descriptor(),
        "oracle": instance.oracle.descriptor(),
        "adversary": instance.adversary.descriptor() if instance.adversary else None,
        "record": record,
    }
    meta.update(instance.meta)
    return Trace(
        horizon=horizon,
        pids=tuple(pids),
        inputs={p: tuple(instance.inputs.get(p, ())) for p in pids},
        steps=steps,
        outputs=outputs,
        meta=meta,
    )


def _validate_requests(instance, setting, pid, t, requests,
                       message_state, permitted, adv_pids):
    if not requests:
        return
    if setting.single_permitter and len(requests) > 1:
        raise ContractViolation(f"{pid}@t={t}: several requests in a single-permitter setting")
    for req in requests:
        if not setting.single_permitter and req.extra is not None:
            raise ContractViolation(
                f"{pid}@t={t}: request extra data in a multi-permitter setting"
            )
        if setting.timed and req.slot is None:
            raise ContractViolation(f"{pid}@t={t}: untimed request in a timed setting")
        if not setting.timed and req.slot is not None:
            raise ContractViolation(f"{pid}@t={t}: timed request in an untimed setting")
        if req.messages and not req.messages <= message_state[pid]:
            stray = [m for m in req.messages
                     if m not in message_state[pid] and not permitted[pid].allows(m)]
            if stray and pid in adv_pids:
                # a coordinated adversary may cite any controlled processor's messages
                stray = [
                    m for m in stray
                    if not any(
                        m in message_state[q] or permitted[q].allows(m)
                        for q in adv_pids if q != pid
                    )
                ]
            if stray:
                raise ContractViolation(
                    f"{pid}@t={t}: request cites unknown messages {stray[:3]!r}"
                )


# ---------------------------------------------------------------------------
# Structural trace checks
# ---------------------------------------------------------------------------


def deliveries_injective(trace: Trace) -> tuple[bool, Optional[str]]:
    """Can every receipt be matched to its own earlier broadcast?

    For each receiver and message, receipts (by slot) must match injectively
    to broadcasts of that message by other processors at strictly earlier
    slots.  Earliest-deadline greedy matching decides feasibility.
    """
    bcasts: dict[Message, list[tuple[int, str]]] = {}
    for pid, t, m in trace.broadcast_events():
        bcasts.setdefault(m, []).append((t, pid))
    for m in bcasts:
        bcasts[m].sort()
    for pid in trace.pids:
        for i, step in enumerate(trace.steps[pid]):
            if step.received is None:
                return False, "trace lacks receipt records (light mode)"
            t = i + 1
            for m in step.received:
                events = [e for e in bcasts.get(m, ()) if e[1] != pid]
                ok = _match_receipt(trace, pid, m, events)
                if not ok:
                    return False, f"{pid} received {m!r} at t={t} with no matching broadcast"
    return True, None


def _match_receipt(trace, pid, m, events) -> bool:
    receipt_slots = [
        i + 1
        for i, step in enumerate(trace.steps[pid])
        if step.received is not None and m in step.received
    ]
    used = [False] * len(events)
    for rt in sorted(receipt_slots):
        found = False
        for j, (bt, sender) in enumerate(events):
            if not used[j] and bt < rt:
                used[j] = True
                found = True
                break
        if not found:
            return False
    return True


def check_trace_timing(trace: Trace, regime: NetworkRegime) -> tuple[bool, Optional[str]]:
    """Receipts must fall inside the regime window of some broadcast, and
    every broadcast must reach every other processor inside its window
    (deliveries falling beyond the trace horizon are not judged)."""
    bcasts: dict[Message, list[tuple[int, str]]] = {}
    for pid, t, m in trace.broadcast_events():
        bcasts.setdefault(m, []).append((t, pid))
    for pid in trace.pids:
        for i, step in enumerate(trace.steps[pid]):
            if step.received is None:
                return False, "trace lacks receipt records (light mode)"
            t = i + 1
            for m in step.received:
                if not any(
                    sender != pid and regime.window_ok(bt, t)
                    for bt, sender in bcasts.get(m, ())
                ):
                    return False, f"{pid} received {m!r} at t={t} outside every window"
    received_slots: dict[str, dict[Message, set[int]]] = {
        pid: {} for pid in trace.pids
    }
    for pid in trace.pids:
        for i, step in enumerate(trace.steps[pid]):
            for m in step.received or ():
                received_slots[pid].setdefault(m, set()).add(i + 1)
    for sender, t, m in trace.broadcast_events():
        deadline = regime.deadline(t)
        if deadline > trace.horizon:
            continue
        for pid in trace.pids:
            if pid == sender:
                continue
            slots = received_slots[pid].get(m, ())
            if not any(regime.window_ok(t, s) for s in slots):
                return False, (
                    f"{sender}'s broadcast of {m!r} at t={t} never reached {pid} "
                    f"by its deadline {deadline}"
                )
    return True, None
