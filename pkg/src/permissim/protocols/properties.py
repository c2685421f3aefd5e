"""Structural properties of recorded executions.

The central check here asks whether a protocol is weakly decentralised:
whether non-faulty processors only ever broadcast messages covered by the
permission they received in the broadcasting slot itself (untimed settings),
or messages stamped with the broadcasting slot (timed settings).  Protocols
that hand out long-lived permissions early and let processors spend them
later fail this check on purpose.
"""
from __future__ import annotations

import json
from typing import Iterable

from ..core import ContractViolation, Message
from ..resources import SettingFlags
from ..scheduler import Trace


def _descriptor_allows(desc, message: Message) -> bool:
    # Mirrors PermissionSet.contains for the extensional descriptor kinds.
    kind = desc[0]
    if kind == "all":
        return True
    if kind == "empty":
        return False
    if kind == "finite":
        return message.hex() in desc[1]
    if kind == "union":
        return any(_descriptor_allows(json.loads(part), message) for part in desc[1])
    raise ContractViolation(
        f"descriptor {desc[0]!r} is intensional; membership cannot be decided "
        "from a trace, use weak_decentralisation_observer on a live run"
    )


def check_weak_decentralisation(
    trace: Trace,
    setting: SettingFlags,
    faulty: Iterable[str] = (),
) -> bool:
    """Did every non-faulty broadcast stay inside its own slot's grant?

    Timed settings: each broadcast message must carry the broadcasting slot
    as its timestamp.  Untimed settings: each broadcast message must belong
    to the permission granted in that very slot, decided from the recorded
    descriptor (a full trace is required).
    """
    skip = frozenset(faulty)
    for pid, steps in trace.steps.items():
        if pid in skip:
            continue
        for i, step in enumerate(steps):
            slot = i + 1
            if not step.broadcast:
                continue
            if setting.timed:
                if any(m.timestamp != slot for m in step.broadcast):
                    return False
                continue
            if step.granted is None:
                raise ContractViolation(
                    "weak decentralisation over an untimed setting needs a "
                    "full trace with granted descriptors recorded"
                )
            desc = json.loads(step.granted)
            if any(not _descriptor_allows(desc, m) for m in step.broadcast):
                return False
    return True


def weak_decentralisation_observer(setting: SettingFlags):
    """Live counterpart of check_weak_decentralisation.

    Returns (observer, violations); pass the observer to run_execution and
    inspect the violations list afterwards.  Works for intensional
    permissions too, since it sees the live permission objects, and checks
    the instructed broadcasts before any adversarial deferral moves them.
    """
    violations: list[tuple[int, str, str]] = []

    def observe(t, pid, received, instructed, state, granted):
        for m in instructed:
            ok = (m.timestamp == t) if setting.timed else granted.contains(m)
            if not ok:
                violations.append((t, pid, m.hex()))

    return observe, violations
