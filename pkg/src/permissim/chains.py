"""Block and chain utilities shared by chain-based protocols and oracles.

A block is structural data: parent id, producer name, optional slot, and a
free data field.  Block ids are content digests (structural identity, no
cryptographic claim).  A chain is the unique parent path from a block back
to the genesis id.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Optional

from . import codec
from .core import Message

GENESIS_ID = "genesis"


@dataclass(frozen=True)
class Block:
    parent: str
    producer: str
    slot: Optional[int] = None
    data: int = 0

    def payload(self) -> tuple:
        return ("block", self.parent, self.producer, self.slot, self.data)

    @cached_property
    def id(self) -> str:
        return codec.hexdigest("block", self.parent, self.producer,
                               -1 if self.slot is None else self.slot, self.data)[:16]


def block_message(block: Block, timed: bool = False) -> Message:
    return Message(block.payload(), timestamp=block.slot if timed else None)


@lru_cache(maxsize=1 << 16)
def parse_block(message: Message) -> Optional[Block]:
    p = message.payload
    if (
        isinstance(p, tuple)
        and len(p) == 5
        and p[0] == "block"
        and isinstance(p[1], str)
        and isinstance(p[2], str)
    ):
        return Block(p[1], p[2], p[3], p[4])
    return None


def blocks_of(messages: Iterable[Message]) -> dict[str, Block]:
    """Index the valid block payloads of a message set by block id."""
    out: dict[str, Block] = {}
    for m in messages:
        blk = parse_block(m)
        if blk is not None:
            out[blk.id] = blk
    return out


def heights(blocks: dict[str, Block]) -> dict[str, int]:
    """Height above genesis for every block whose ancestry reaches genesis.

    Orphans (missing parents) get no height and cannot be tips.
    """
    out: dict[str, int] = {GENESIS_ID: 0}
    for bid in blocks:
        _height_walk(bid, blocks, out)
    out.pop(GENESIS_ID)
    return out


def _height_walk(bid: str, blocks: dict[str, Block], out: dict[str, int]) -> Optional[int]:
    path = []
    cur = bid
    while cur not in out:
        blk = blocks.get(cur)
        if blk is None or cur in path:
            return None  # orphan or malformed loop
        path.append(cur)
        cur = blk.parent
    h = out[cur]
    for node in reversed(path):
        h += 1
        out[node] = h
    return out.get(bid)


def longest_tips(blocks: dict[str, Block]) -> list[str]:
    """Ids of maximal-height blocks; [GENESIS_ID] when no block has height."""
    hs = heights(blocks)
    if not hs:
        return [GENESIS_ID]
    best = max(hs.values())
    return sorted(bid for bid, h in hs.items() if h == best)


def best_tip(blocks: dict[str, Block]) -> str:
    """The longest-chain tip, ties broken by lowest block id."""
    return longest_tips(blocks)[0]


def chain_ids(blocks: dict[str, Block], tip: str) -> list[str]:
    """Block ids from just above genesis to tip; [] for the genesis tip."""
    out = []
    cur = tip
    while cur != GENESIS_ID:
        blk = blocks.get(cur)
        if blk is None:
            raise ValueError(f"orphaned chain at {cur}")
        out.append(cur)
        cur = blk.parent
    out.reverse()
    return out


def chain_from_tip(blocks: dict[str, Block], tip: str) -> list[Block]:
    return [blocks[bid] for bid in chain_ids(blocks, tip)]


def confirmed_ids(blocks: dict[str, Block], tip: str, depth: int) -> list[str]:
    """The chain of tip, truncated to blocks at least `depth` below the tip."""
    chain = chain_ids(blocks, tip)
    if depth <= 0:
        return chain
    return chain[:-depth] if depth <= len(chain) else []


def as_chain(messages: Iterable[Message]) -> Optional[str]:
    """If the message set is exactly one linear chain from genesis, return
    its tip id (GENESIS_ID for the empty set); otherwise None."""
    blocks = blocks_of(messages)
    msgs = [m for m in messages if parse_block(m) is not None]
    if len(msgs) != len(blocks):
        return None
    if any(parse_block(m) is None for m in messages):
        return None
    if not blocks:
        return GENESIS_ID
    hs = heights(blocks)
    if len(hs) != len(blocks):
        return None  # orphans present
    by_height = sorted(hs.items(), key=lambda kv: kv[1])
    expect = GENESIS_ID
    for i, (bid, h) in enumerate(by_height):
        if h != i + 1 or blocks[bid].parent != expect:
            return None
        expect = bid
    return expect
