"""Execution semantics: delivery, permission discipline, traces."""

import dataclasses

import pytest

from permissim.core import (
    ContractViolation,
    Identifier,
    Message,
    ProcessorSpec,
    Request,
)
from permissim.permitters import GrantAllIfFunded
from permissim.protocols.nakamoto import build_nakamoto
from permissim.protocols.pos_bb import build_pos_bb, round_time
from permissim.protocols.simple import build_echo_or, build_idle
from permissim.resources import ConstantPool, NetworkRegime, SettingFlags
from permissim.scheduler import (
    AdversaryStrategy,
    ProtocolInstance,
    TimingRule,
    Trace,
    TraceStep,
    check_trace_timing,
    deliveries_injective,
    run_execution,
    validate_timing_rule,
)

SYNC1 = NetworkRegime("synchronous", 1)


def _single(pid: str, transition, output=None, setting=None, oracle=None):
    """One-processor instance around a custom transition function."""
    ident = Identifier(pid)
    spec = ProcessorSpec(
        pid, ident,
        init=lambda inputs: 0,
        transition=transition,
        output=output or (lambda s: None),
    )
    return ProtocolInstance(
        processors={pid: spec},
        inputs={},
        pool=ConstantPool({ident: 1.0}),
        oracle=oracle or GrantAllIfFunded(),
        setting=setting or SettingFlags(
            timed=False, sized=True, single_permitter=True,
            authenticated=False, regime=SYNC1,
        ),
        timing=TimingRule(SYNC1),
    )


def test_idle_run_is_quiet():
    trace = run_execution(build_idle(n=3), 4)
    assert trace.outputs == {}
    for pid in trace.pids:
        for step in trace.steps[pid]:
            assert step.broadcast == ()
            assert step.received == ()
            assert step.requests == ()


def test_rerun_is_byte_identical():
    t1 = run_execution(build_nakamoto(miners=3, blocks_per_slot=0.2, seed=9), 30)
    t2 = run_execution(build_nakamoto(miners=3, blocks_per_slot=0.2, seed=9), 30)
    assert t1.to_jsonl() == t2.to_jsonl()
    t3 = run_execution(build_nakamoto(miners=3, blocks_per_slot=0.2, seed=10), 30)
    assert t1.to_jsonl() != t3.to_jsonl()


def test_generated_traces_are_structurally_sound():
    runs = [
        (build_echo_or(bits), 6)
        for bits in ((0, 0), (0, 1), (1, 0), (1, 1))
    ]
    runs += [(build_nakamoto(miners=3, blocks_per_slot=0.3, seed=s), 25) for s in range(4)]
    runs.append((build_pos_bb(seed=1), None))
    for instance, horizon in runs:
        horizon = horizon or instance.meta["horizon"]
        validate_timing_rule(instance.timing, instance.processors, horizon)
        trace = run_execution(instance, horizon)
        ok, why = deliveries_injective(trace)
        assert ok, why
        ok, why = check_trace_timing(trace, instance.setting.regime)
        assert ok, why


def _hand_trace(b_broadcast_slots, a_receive_slots, horizon=3):
    m = Message(("vote", "x", 1))
    blank = TraceStep(received=(), granted="[]", broadcast=(), requests=(), state=None)
    steps = {
        "a": [
            dataclasses.replace(blank, received=(m,) if t in a_receive_slots else ())
            for t in range(1, horizon + 1)
        ],
        "b": [
            dataclasses.replace(blank, broadcast=(m,) if t in b_broadcast_slots else ())
            for t in range(1, horizon + 1)
        ],
    }
    return Trace(horizon=horizon, pids=("a", "b"), inputs={}, steps=steps, outputs={})


def test_double_receipt_is_rejected():
    # one broadcast cannot explain two receipts of the same message
    trace = _hand_trace(b_broadcast_slots={1}, a_receive_slots={2, 3})
    ok, why = deliveries_injective(trace)
    assert not ok
    assert "no matching broadcast" in why


def test_matching_rebroadcast_is_accepted():
    trace = _hand_trace(b_broadcast_slots={1, 2}, a_receive_slots={2, 3})
    ok, _ = deliveries_injective(trace)
    assert ok
    ok, _ = check_trace_timing(trace, SYNC1)
    assert ok


def test_receipt_outside_window_fails_timing():
    trace = _hand_trace(b_broadcast_slots={1}, a_receive_slots={3})
    ok, _ = deliveries_injective(trace)
    assert ok  # matching is fine, the window is not
    ok, why = check_trace_timing(trace, SYNC1)
    assert not ok
    assert "outside every window" in why


def test_undelivered_broadcast_fails_timing():
    trace = _hand_trace(b_broadcast_slots={1}, a_receive_slots=set())
    ok, why = check_trace_timing(trace, SYNC1)
    assert not ok
    assert "never reached" in why


def test_horizon_prefix_is_stable():
    # lengthening the run never rewrites what already happened
    short = run_execution(build_nakamoto(miners=3, blocks_per_slot=0.3, seed=5), 15)
    long = run_execution(build_nakamoto(miners=3, blocks_per_slot=0.3, seed=5), 28)
    for pid in short.pids:
        assert short.view_bytes(pid) == long.view_bytes(pid, through=15)
        for t in range(1, 16):
            assert short.step_at(pid, t).broadcast == long.step_at(pid, t).broadcast


def test_solo_miner_receives_nothing():
    # broadcasts are not self-delivered
    trace = run_execution(build_nakamoto(miners=1, blocks_per_slot=0.3, seed=2), 30)
    mined = sum(len(s.broadcast) for s in trace.steps["m0"])
    assert mined > 0
    assert all(s.received == () for s in trace.steps["m0"])


def test_single_permitter_allows_one_request_per_slot():
    def transition(state, received, granted):
        return (), (Request(None), Request(None, (), ("x",))), state + 1

    with pytest.raises(ContractViolation, match="several requests"):
        run_execution(_single("w", transition), 2)


def test_multi_permitter_forbids_extras():
    setting = SettingFlags(
        timed=False, sized=True, single_permitter=False,
        authenticated=False, regime=SYNC1,
    )

    def transition(state, received, granted):
        return (), (Request(None, (), ("x",)),), state + 1

    with pytest.raises(ContractViolation, match="extra data in a multi-permitter"):
        run_execution(_single("w", transition, setting=setting), 2)


def test_timed_setting_requires_request_slots():
    setting = SettingFlags(
        timed=True, sized=True, single_permitter=True,
        authenticated=False, regime=SYNC1,
    )

    def transition(state, received, granted):
        return (), (Request(None),), state + 1

    with pytest.raises(ContractViolation, match="untimed request in a timed"):
        run_execution(_single("w", transition, setting=setting), 2)


def test_untimed_setting_forbids_request_slots():
    def transition(state, received, granted):
        return (), (Request(2),), state + 1

    with pytest.raises(ContractViolation, match="timed request in an untimed"):
        run_execution(_single("w", transition), 2)


def test_request_may_only_cite_known_messages():
    ghost = Message("never-seen")

    def transition(state, received, granted):
        return (), (Request(None, (ghost,)),), state + 1

    with pytest.raises(ContractViolation, match="cites unknown messages"):
        run_execution(_single("w", transition), 2)


def test_unpermitted_broadcast_is_rejected():
    m = Message("shout")

    def transition(state, received, granted):
        # never requested anything, so nothing is permitted
        return (m,), (), state + 1

    with pytest.raises(ContractViolation, match="unpermitted message"):
        run_execution(_single("w", transition), 2)


def test_output_is_fixed_by_first_decision():
    def transition(state, received, granted):
        return (), (), state + 1

    def output(state):
        return state if state >= 2 else None

    trace = run_execution(_single("w", transition, output=output), 5)
    assert trace.outputs == {"w": (2, 2)}


def test_output_at_initialization_lands_at_slot_zero():
    def transition(state, received, granted):
        return (), (), state + 1

    trace = run_execution(_single("w", transition, output=lambda s: 7), 3)
    assert trace.outputs == {"w": (7, 0)}


def test_pos_bb_unanimous_zero_decides_on_time():
    instance = build_pos_bb(values=0, seed=0)
    k, delta = instance.meta["k"], instance.meta["delta"]
    horizon = instance.meta["horizon"]
    assert horizon == round_time(k + 1, delta)
    trace = run_execution(instance, horizon)
    assert trace.outputs == {
        pid: (0, horizon) for pid in instance.meta["deciders"]
    }


def test_validate_timing_rule_examples():
    sync2 = NetworkRegime("synchronous", 2)
    assert validate_timing_rule(TimingRule(sync2, step=2), ["a", "b"], 6)
    with pytest.raises(ContractViolation, match="outside the synchronous window"):
        validate_timing_rule(TimingRule(sync2, step=3), ["a", "b"], 6)
    partial = NetworkRegime("partial", 1, stabilization=5)
    defer = TimingRule(partial, defer_pairs=frozenset({("a", "b")}))
    assert validate_timing_rule(defer, ["a", "b"], 12)
    with pytest.raises(ContractViolation, match="outside the partial window"):
        validate_timing_rule(TimingRule(partial, step=0), ["a", "b"], 12)


def test_jsonl_roundtrip_preserves_the_run():
    for instance, horizon in ((build_echo_or((1, 0)), 6), (build_pos_bb(seed=4), 10)):
        trace = run_execution(instance, horizon)
        back = Trace.from_jsonl(trace.to_jsonl())
        assert back.pids == trace.pids
        assert back.horizon == trace.horizon
        assert back.outputs == trace.outputs
        assert back.meta["parsed"] is True
        for pid in trace.pids:
            assert back.view_bytes(pid) == trace.view_bytes(pid)
            for t in range(1, horizon + 1):
                assert back.step_at(pid, t).broadcast == trace.step_at(pid, t).broadcast


def test_deferral_moves_physical_broadcast_only():
    base = build_echo_or((1, 1))
    adv = AdversaryStrategy(pids=frozenset({"src2"}), delay_schedule={("src2", 2): 4})
    instance = dataclasses.replace(base, adversary=adv)
    instructed = {}

    def observer(t, pid, received, broadcast, new_state, granted):
        if broadcast:
            instructed[(pid, t)] = frozenset(broadcast)

    trace = run_execution(instance, 6, observer=observer)
    assert instructed[("src2", 2)]  # the machine spoke at its usual slot
    assert trace.step_at("src2", 2).broadcast == ()
    assert frozenset(trace.step_at("src2", 4).broadcast) == instructed[("src2", 2)]
    ok, why = deliveries_injective(trace)
    assert ok, why


def test_light_mode_skips_receipt_records():
    trace = run_execution(build_echo_or((0, 1)), 6, record="light")
    assert trace.outputs  # outputs still recorded
    step = trace.step_at("p0", 3)
    assert step.received is None and step.granted is None and step.requests is None
    ok, why = deliveries_injective(trace)
    assert not ok and "light mode" in why
