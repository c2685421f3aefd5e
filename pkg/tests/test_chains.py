"""Block indexing, heights, tips, and chain recognition."""

import random

from permissim.chains import (
    GENESIS_ID,
    Block,
    as_chain,
    best_tip,
    block_message,
    blocks_of,
    chain_ids,
    confirmed_ids,
    heights,
    longest_tips,
    parse_block,
)
from permissim.core import Message


def _linear(n, producer="m", start_parent=GENESIS_ID, data=0):
    out = []
    parent = start_parent
    for i in range(n):
        blk = Block(parent=parent, producer=producer, slot=i + 1, data=data)
        out.append(blk)
        parent = blk.id
    return out


def test_block_ids_are_content_digests():
    a = Block(GENESIS_ID, "m0", 1, 0)
    b = Block(GENESIS_ID, "m0", 1, 0)
    c = Block(GENESIS_ID, "m0", 1, 1)
    assert a.id == b.id
    assert a.id != c.id
    assert len(a.id) == 16
    # untimed and slot-0 blocks stay distinguishable
    assert Block(GENESIS_ID, "m0", None, 0).id != Block(GENESIS_ID, "m0", 0, 0).id


def test_block_message_roundtrip():
    blk = Block(GENESIS_ID, "m3", 7, 2)
    assert parse_block(block_message(blk)) == blk
    assert block_message(blk, timed=True).timestamp == 7
    assert block_message(blk).timestamp is None
    assert parse_block(Message("not a block")) is None


def test_heights_skip_orphans():
    chain = _linear(3)
    orphan = Block(parent="missing", producer="x", slot=9)
    idx = {b.id: b for b in chain + [orphan]}
    hs = heights(idx)
    assert [hs[b.id] for b in chain] == [1, 2, 3]
    assert orphan.id not in hs


def test_longest_tips_and_ties():
    assert longest_tips({}) == [GENESIS_ID]
    chain = _linear(2)
    idx = {b.id: b for b in chain}
    assert longest_tips(idx) == [chain[-1].id]
    # a fork of equal height yields both tips, sorted
    rival = Block(parent=chain[0].id, producer="r", slot=5)
    idx[rival.id] = rival
    tips = longest_tips(idx)
    assert set(tips) == {chain[-1].id, rival.id}
    assert tips == sorted(tips)
    assert best_tip(idx) == tips[0]


def test_chain_ids_and_confirmation_depth():
    chain = _linear(5)
    idx = {b.id: b for b in chain}
    tip = chain[-1].id
    assert chain_ids(idx, GENESIS_ID) == []
    assert chain_ids(idx, tip) == [b.id for b in chain]
    assert confirmed_ids(idx, tip, 0) == [b.id for b in chain]
    assert confirmed_ids(idx, tip, 2) == [b.id for b in chain[:3]]
    assert confirmed_ids(idx, tip, 5) == []
    assert confirmed_ids(idx, tip, 9) == []


def test_as_chain_accepts_exactly_linear_sets():
    assert as_chain(frozenset()) == GENESIS_ID
    chain = _linear(4)
    msgs = frozenset(block_message(b) for b in chain)
    assert as_chain(msgs) == chain[-1].id
    # non-block content disqualifies the set
    assert as_chain(msgs | {Message("chatter")}) is None
    # forks disqualify
    rival = Block(parent=chain[0].id, producer="r", slot=8)
    assert as_chain(msgs | {block_message(rival)}) is None
    # a gap (orphan) disqualifies
    assert as_chain(frozenset(block_message(b) for b in chain[1:])) is None


def test_as_chain_matches_structural_oracle():
    # oracle: walk parents from the unique childless block and demand the
    # walk visits every block exactly once, ending at genesis
    def oracle(blocks: list[Block]):
        idx = {b.id: b for b in blocks}
        if len(idx) != len(blocks):
            return None
        parents = {b.parent for b in blocks}
        tips = [bid for bid in idx if bid not in parents]
        if not blocks:
            return GENESIS_ID
        if len(tips) != 1:
            return None
        seen = []
        cur = tips[0]
        while cur != GENESIS_ID:
            if cur not in idx or cur in seen:
                return None
            seen.append(cur)
            cur = idx[cur].parent
        return tips[0] if len(seen) == len(blocks) else None

    rng = random.Random(11)
    for _ in range(300):
        blocks = []
        ids = [GENESIS_ID]
        for i in range(rng.randrange(0, 6)):
            parent = rng.choice(ids) if rng.random() < 0.35 else ids[-1]
            blk = Block(parent=parent, producer=f"w{rng.randrange(3)}", slot=i + 1)
            blocks.append(blk)
            ids.append(blk.id)
        if rng.random() < 0.2 and blocks:
            blocks.pop(rng.randrange(len(blocks)))
        msgs = frozenset(block_message(b) for b in blocks)
        assert as_chain(msgs) == oracle(blocks)


def test_blocks_of_ignores_foreign_messages():
    blk = Block(GENESIS_ID, "m0", 1)
    good = block_message(blk)
    assert blocks_of([good, Message(0), Message(("vote", "a", 1))]) == {blk.id: blk}
