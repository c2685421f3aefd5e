"""Longest-chain mining on workload-style permissions.

Each miner queries the block permitter once per slot with a candidate
extending its best tip, broadcasts whatever it is granted, and adopts the
longest chain it knows (ties to the lowest block id).  A block is
confirmed once it sits at least `depth` below the adopted tip.

The private-mining adversary mines on a withheld fork by citing only its
own chain in requests, and releases the fork once the public chain has
confirmed a block above the fork point while the fork is strictly longer,
rewriting confirmed history.  ChainMonitor watches runs incrementally so
wide Monte Carlo sweeps never have to post-process traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional

from scipy.optimize import brentq

from ..chains import GENESIS_ID, Block, block_message, chain_ids, parse_block
from ..core import Identifier, Message, ProcessorSpec, Request
from ..permitters import PowPermitter
from ..resources import ConstantPool, NetworkRegime, pow_style
from ..scheduler import AdversaryStrategy, ProtocolInstance, TimingRule, Trace


def tune_rate(balances: Iterable[float], blocks_per_slot: float) -> float:
    """The per-query rate at which the expected number of blocks granted per
    slot across all miners equals blocks_per_slot."""
    bals = [float(b) for b in balances if b > 0]
    if not bals or not 0 < blocks_per_slot < len(bals):
        raise ValueError("expected block rate must be in (0, number of miners)")

    def gap(lam: float) -> float:
        return sum(1.0 - math.exp(-lam * b) for b in bals) - blocks_per_slot

    hi = 1.0
    while gap(hi) < 0:
        hi *= 2.0
    return brentq(gap, 1e-15, hi, xtol=1e-15)


# ---------------------------------------------------------------------------
# Honest miner
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class MinerState:
    """Treated as immutable: transitions copy any container they extend."""

    slot: int
    msgs: frozenset  # every block message known, the set cited in requests
    blocks: dict  # block id -> Block, connected blocks only
    hts: dict  # block id -> height
    orphans: dict  # parent id -> tuple of (Block, Message) awaiting the parent
    tip: str
    tip_h: int
    req_parent: Optional[str]


def _connect(blocks, hts, orphans, blk, msg, tip, tip_h):
    """Attach blk (and any orphans it unlocks); returns the new best tip."""
    if blk.id in blocks:
        return tip, tip_h
    if blk.parent != GENESIS_ID and blk.parent not in hts:
        orphans[blk.parent] = orphans.get(blk.parent, ()) + ((blk, msg),)
        return tip, tip_h
    stack = [blk]
    while stack:
        b = stack.pop()
        if b.id in blocks:
            continue
        h = 1 if b.parent == GENESIS_ID else hts[b.parent] + 1
        blocks[b.id] = b
        hts[b.id] = h
        if h > tip_h or (h == tip_h and b.id < tip):
            tip, tip_h = b.id, h
        for child, _ in orphans.pop(b.id, ()):
            stack.append(child)
    return tip, tip_h


def miner_spec(pid: str, identifier: Identifier) -> ProcessorSpec:
    me = identifier.name

    # Candidates and requests are pure functions of the cited tip, and the
    # tip moves rarely, so memoizing them keeps the hot loop allocation-free.
    @lru_cache(maxsize=256)
    def candidate(parent):
        blk = Block(parent, me, None, 0)
        return blk, block_message(blk)

    @lru_cache(maxsize=256)
    def make_request(msgs, tip):
        return Request(None, msgs, ("block", tip, me, 0))

    def init(inputs):
        return MinerState(0, frozenset(), {}, {}, {}, GENESIS_ID, 0, None)

    def transition(state, received, granted):
        slot = state.slot + 1
        msgs = state.msgs
        blocks, hts, orphans = state.blocks, state.hts, state.orphans
        tip, tip_h = state.tip, state.tip_h

        incoming = []
        for m in received:
            if m not in msgs:
                blk = parse_block(m)
                if blk is not None:
                    incoming.append((blk, m))
        broadcast: tuple = ()
        if state.req_parent is not None:
            cand, cand_msg = candidate(state.req_parent)
            if cand_msg not in msgs and granted.contains(cand_msg):
                incoming.append((cand, cand_msg))
                broadcast = (cand_msg,)
        if incoming:
            blocks, hts, orphans = dict(blocks), dict(hts), dict(orphans)
            for blk, m in incoming:
                tip, tip_h = _connect(blocks, hts, orphans, blk, m, tip, tip_h)
            msgs = msgs | frozenset(m for _, m in incoming)

        request = make_request(msgs, tip)
        return broadcast, (request,), MinerState(
            slot, msgs, blocks, hts, orphans, tip, tip_h, tip,
        )

    return ProcessorSpec(pid, identifier, init, transition, input_sensitive=False)


# ---------------------------------------------------------------------------
# Private-mining adversary
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class PrivateMinerState:
    slot: int
    blocks: dict
    hts: dict
    orphans: dict
    pub_tip: str
    pub_h: int
    priv_tip: str
    priv_h: int
    fork_h: int  # height of the block the private fork grows from
    cite: frozenset  # the private chain's messages, what requests cite
    withheld: tuple  # granted but unreleased messages
    msg_of: dict  # block id -> message, for rebuilding cite on re-forks
    req_parent: Optional[str]


def private_miner_spec(pid: str, identifier: Identifier, depth: int) -> ProcessorSpec:
    """Withholds everything it mines until the public chain confirms a block
    above the fork point while the fork is strictly longer, then releases.

    Requests cite only the private chain, so the permitter sees the fork as
    the longest chain it knows about.
    """
    me = identifier.name

    @lru_cache(maxsize=256)
    def candidate(parent):
        blk = Block(parent, me, None, 0)
        return blk, block_message(blk)

    @lru_cache(maxsize=256)
    def make_request(cite, tip):
        return Request(None, cite, ("block", tip, me, 0))

    def init(inputs):
        return PrivateMinerState(
            0, {}, {}, {}, GENESIS_ID, 0, GENESIS_ID, 0, 0,
            frozenset(), (), {}, None,
        )

    def transition(state, received, granted):
        slot = state.slot + 1
        blocks, hts, orphans = state.blocks, state.hts, state.orphans
        msg_of = state.msg_of
        pub_tip, pub_h = state.pub_tip, state.pub_h
        priv_tip, priv_h = state.priv_tip, state.priv_h
        fork_h = state.fork_h
        cite, withheld = state.cite, state.withheld

        incoming = []
        for m in received:
            blk = parse_block(m)
            if blk is not None and blk.id not in blocks:
                incoming.append((blk, m, False))
        mined = None
        if state.req_parent is not None:
            cand, cand_msg = candidate(state.req_parent)
            if cand.id not in blocks and granted.contains(cand_msg):
                incoming.append((cand, cand_msg, True))
                mined = (cand, cand_msg)
        if incoming:
            blocks, hts, orphans = dict(blocks), dict(hts), dict(orphans)
            msg_of = dict(msg_of)
            for blk, m, private in incoming:
                msg_of[blk.id] = m
                if private:
                    priv_tip, priv_h = _connect(
                        blocks, hts, orphans, blk, m, priv_tip, priv_h
                    )
                else:
                    pub_tip, pub_h = _connect(
                        blocks, hts, orphans, blk, m, pub_tip, pub_h
                    )
        if mined is not None:
            cite = cite | {mined[1]}
            withheld = withheld + (mined[1],)

        broadcast: tuple = ()
        if withheld and priv_h > pub_h and pub_h - fork_h > depth:
            # the public side confirmed a block above the fork point; rewrite it
            broadcast = withheld
            withheld = ()
            pub_tip, pub_h = priv_tip, priv_h
            fork_h = priv_h
        elif pub_h > priv_h:
            # the race is lost; restart the fork from the public tip
            withheld = ()
            priv_tip, priv_h = pub_tip, pub_h
            fork_h = pub_h
            cite = frozenset(msg_of[b] for b in chain_ids(blocks, pub_tip))

        request = make_request(cite, priv_tip)
        return broadcast, (request,), PrivateMinerState(
            slot, blocks, hts, orphans, pub_tip, pub_h, priv_tip, priv_h,
            fork_h, cite, withheld, msg_of, priv_tip,
        )

    return ProcessorSpec(pid, identifier, init, transition, input_sensitive=False)


# ---------------------------------------------------------------------------
# Consistency and liveness monitoring
# ---------------------------------------------------------------------------


class ChainMonitor:
    """Incremental confirmed-chain watcher, usable as a run observer.

    Consistency: each honest miner's confirmed chain only ever grows, and
    any two confirmed chains at the same moment are prefix-compatible.
    Liveness: each honest miner's confirmed height grows inside every full
    window after the first (the first window is warmup while depth builds).
    """

    def __init__(self, honest: Iterable[str], depth: int, window: int = 100):
        self.honest = sorted(honest)
        self.depth = depth
        self.window = window
        self.confirmed: dict[str, list[str]] = {p: [] for p in self.honest}
        self._tip: dict[str, str] = {p: GENESIS_ID for p in self.honest}
        self.marks: dict[str, list[int]] = {p: [] for p in self.honest}
        self.violations: list[str] = []

    def observe(self, t, pid, received, broadcast, state, granted=None):
        if pid not in self.confirmed:
            return
        if state.tip != self._tip[pid]:
            self._tip[pid] = state.tip
            chain = chain_ids(state.blocks, state.tip)
            head = chain[: -self.depth] if self.depth else chain
            old = self.confirmed[pid]
            if head[: len(old)] != old:
                self.violations.append(
                    f"{pid}@t={t}: confirmed chain rewrote itself at height "
                    f"{len(head)} vs {len(old)}"
                )
            self.confirmed[pid] = head
            for other in self.honest:
                if other == pid:
                    continue
                o = self.confirmed[other]
                n = min(len(o), len(head))
                if o[:n] != head[:n]:
                    self.violations.append(
                        f"{pid}/{other}@t={t}: confirmed chains diverge"
                    )
        if pid == self.honest[-1] and t % self.window == 0:
            for p in self.honest:
                self.marks[p].append(len(self.confirmed[p]))

    def report(self) -> dict:
        live = True
        for p in self.honest:
            marks = self.marks[p]
            for j in range(1, len(marks)):
                if marks[j] <= marks[j - 1]:
                    live = False
        return {
            "consistent": not self.violations,
            "violations": list(self.violations),
            "live": live,
            "confirmed_heights": {p: list(self.marks[p]) for p in self.honest},
        }


def check_consistency_liveness(
    trace: Trace, depth: int, window: int = 100,
    honest: Optional[Iterable[str]] = None,
) -> dict:
    """Replay a recorded run's miner states through the monitor."""
    pids = sorted(honest) if honest is not None else list(trace.pids)
    mon = ChainMonitor(pids, depth, window)
    for t in range(1, trace.horizon + 1):
        for pid in pids:
            mon.observe(t, pid, (), (), trace.step_at(pid, t).state)
    return mon.report()


def fork_count(blocks: dict[str, Block]) -> int:
    """Number of parents with more than one child (0 for a single chain)."""
    children: dict[str, int] = {}
    for blk in blocks.values():
        children[blk.parent] = children.get(blk.parent, 0) + 1
    return sum(1 for c in children.values() if c > 1)


# ---------------------------------------------------------------------------
# Instance builder
# ---------------------------------------------------------------------------


def build_nakamoto(
    miners: int = 4,
    blocks_per_slot: float = 0.1,
    balances: Optional[list[float]] = None,
    delta: int = 1,
    confirm_depth: int = 6,
    private_miner: bool = False,
    q: Optional[float] = None,
    horizon: int = 500,
    seed: int = 0,
) -> ProtocolInstance:
    """`miners` processors mining at a total expected blocks_per_slot; the
    first miner runs the private-fork strategy when private_miner is set."""
    bals = list(balances) if balances is not None else [1.0] * miners
    if len(bals) != miners:
        raise ValueError("need one balance per miner")
    pids = [f"m{i}" for i in range(miners)]
    idents = {p: Identifier(p) for p in pids}
    regime = NetworkRegime("synchronous", delta)
    rate = tune_rate(bals, blocks_per_slot)
    total = sum(bals)
    adversary = None
    if private_miner:
        adversary = AdversaryStrategy(
            pids=frozenset({pids[0]}),
            override_specs={
                pids[0]: private_miner_spec(pids[0], idents[pids[0]], confirm_depth)
            },
            name="private-miner",
        )
    return ProtocolInstance(
        processors={p: miner_spec(p, idents[p]) for p in pids},
        inputs={},
        pool=ConstantPool({idents[p]: b for p, b in zip(pids, bals)}),
        oracle=PowPermitter(rate),
        setting=pow_style(regime, alpha=(total, total)),
        timing=TimingRule(regime),
        seed=seed,
        adversary=adversary,
        q=q,
        meta={
            "protocol": "nakamoto",
            "horizon": horizon,
            "confirm_depth": confirm_depth,
            "rate": rate,
            "miners": pids,
        },
    )
