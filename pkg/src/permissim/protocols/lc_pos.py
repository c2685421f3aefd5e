"""Leader-based stake chain.

Stakers request leadership for the next slot on every odd slot, citing
their current best chain.  The leader permitter draws one leader per
(chain, slot) pair, weighted by stake, and only the leader is permitted a
block there.  The winning staker broadcasts its block at exactly the slot
whose request earned it, with the slot as the message timestamp, so the
protocol is weakly decentralised in the timed sense.

With unit message delay the two-slot cadence keeps every staker's view
identical at request time: a block minted at an even slot reaches everyone
before the next odd-slot request, so all stakers cite the same chain and
see the same leader draw.  No forks form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..chains import GENESIS_ID, Block, block_message, chain_ids, parse_block
from ..core import Identifier, ProcessorSpec, Request
from ..permitters import PosLeaderPermitter
from ..resources import NetworkRegime, StakeFromChainPool, pos_style
from ..scheduler import ProtocolInstance, TimingRule


@dataclass(slots=True)
class StakerState:
    """Immutable by convention; containers are copied when they change."""

    slot: int
    blocks: dict  # block id -> Block
    hts: dict
    msg_of: dict  # block id -> its timed message
    tip: str
    tip_h: int
    chain_msgs: frozenset  # messages of the best chain, cited in requests
    req: Optional[tuple]  # (parent id, slot) of the outstanding request


def staker_spec(pid: str, identifier: Identifier) -> ProcessorSpec:
    me = identifier.name

    def init(inputs):
        return StakerState(0, {}, {}, {}, GENESIS_ID, 0, frozenset(), None)

    def transition(state, received, granted):
        slot = state.slot + 1
        blocks, hts, msg_of = state.blocks, state.hts, state.msg_of
        tip, tip_h = state.tip, state.tip_h

        incoming = []
        for m in received:
            blk = parse_block(m)
            if blk is not None and blk.id not in blocks:
                incoming.append((blk, m))
        broadcast: tuple = ()
        if state.req is not None and state.req[1] == slot:
            cand = Block(state.req[0], me, slot, 0)
            cand_msg = block_message(cand, timed=True)
            if granted.contains(cand_msg):
                incoming.append((cand, cand_msg))
                broadcast = (cand_msg,)
        chain_msgs = state.chain_msgs
        if incoming:
            blocks, hts, msg_of = dict(blocks), dict(hts), dict(msg_of)
            for blk, m in incoming:
                if blk.parent != GENESIS_ID and blk.parent not in hts:
                    continue  # stray orphan; honest runs never produce one
                h = 1 if blk.parent == GENESIS_ID else hts[blk.parent] + 1
                blocks[blk.id] = blk
                hts[blk.id] = h
                msg_of[blk.id] = m
                if h > tip_h or (h == tip_h and blk.id < tip):
                    tip, tip_h = blk.id, h
            if tip != state.tip:
                chain_msgs = frozenset(msg_of[b] for b in chain_ids(blocks, tip))

        requests: tuple = ()
        req = None
        if slot % 2 == 1:
            requests = (Request(slot + 1, chain_msgs, None),)
            req = (tip, slot + 1)
        return broadcast, requests, StakerState(
            slot, blocks, hts, msg_of, tip, tip_h, chain_msgs, req,
        )

    return ProcessorSpec(pid, identifier, init, transition, input_sensitive=False)


def build_lc_pos(
    stakers: int = 4,
    stakes: Optional[list[float]] = None,
    reward: float = 0.0,
    delta: int = 1,
    horizon: int = 40,
    q: Optional[float] = None,
    seed: int = 0,
) -> ProtocolInstance:
    bals = list(stakes) if stakes is not None else [1.0] * stakers
    if len(bals) != stakers:
        raise ValueError("need one stake per staker")
    pids = [f"s{i}" for i in range(stakers)]
    idents = {p: Identifier(p) for p in pids}
    regime = NetworkRegime("synchronous", delta)
    pool = StakeFromChainPool(
        {idents[p]: b for p, b in zip(pids, bals)}, reward=reward
    )
    return ProtocolInstance(
        processors={p: staker_spec(p, idents[p]) for p in pids},
        inputs={},
        pool=pool,
        oracle=PosLeaderPermitter(pool),
        setting=pos_style(regime),
        timing=TimingRule(regime),
        seed=seed,
        q=q,
        meta={
            "protocol": "lc-pos",
            "horizon": horizon,
            "stakers": pids,
        },
    )
