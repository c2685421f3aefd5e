"""Protocol registry: name -> instance builder.

Builders return a ProtocolInstance whose meta carries the recommended
horizon under the "horizon" key; run_execution still takes the horizon
explicitly so callers may cut runs short or extend them.
"""

from __future__ import annotations

from typing import Callable

from ..scheduler import ProtocolInstance
from .lc_pos import build_lc_pos
from .nakamoto import build_nakamoto
from .pos_bb import build_pos_bb
from .simple import (
    build_echo_bb,
    build_echo_or,
    build_idle,
    build_naive_majority,
)

PROTOCOLS: dict[str, Callable[..., ProtocolInstance]] = {
    "idle": build_idle,
    "naive-majority": build_naive_majority,
    "echo-or": build_echo_or,
    "echo-bb": build_echo_bb,
    "pos-bb": build_pos_bb,
    "nakamoto": build_nakamoto,
    "lc-pos": build_lc_pos,
}


def get_protocol(name: str) -> Callable[..., ProtocolInstance]:
    try:
        return PROTOCOLS[name]
    except KeyError:
        known = ", ".join(sorted(PROTOCOLS))
        raise ValueError(f"unknown protocol {name!r} (known: {known})") from None
