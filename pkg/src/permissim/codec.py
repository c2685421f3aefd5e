"""Canonical byte encodings and deterministic randomness derivation.

Every message has exactly one byte encoding, built from length-prefixed
frames.  A frame is a 1-byte tag, a 4-byte big-endian body length, and the
body itself.  Because a frame's header fixes its total length, no encoding
is a proper prefix of another, so the encoded message space is prefix-free
by construction.

The same framing feeds the seed-derivation helpers: a digest over framed
parts cannot collide across part boundaries, which keeps every derived
random stream stable under refactoring and independent across call sites.
"""

from __future__ import annotations

import hashlib
import json
from typing import Any

TAG_VALUE = 0x01
TAG_IDENT = 0x02
TAG_CORE = 0x03
TAG_SIGNED = 0x04

_HEADER = 5  # tag byte plus 4-byte length


def canon_json(value: Any) -> str:
    """Serialize a plain value tree to canonical JSON text."""
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def frame(tag: int, body: bytes) -> bytes:
    if len(body) >= 1 << 32:
        raise ValueError("frame body too large")
    return bytes((tag,)) + len(body).to_bytes(4, "big") + body


def read_frame(data: bytes, offset: int = 0) -> tuple[int, bytes, int]:
    """Return (tag, body, next_offset) for the frame at offset."""
    if offset + _HEADER > len(data):
        raise ValueError("truncated frame header")
    tag = data[offset]
    size = int.from_bytes(data[offset + 1 : offset + _HEADER], "big")
    end = offset + _HEADER + size
    if end > len(data):
        raise ValueError("truncated frame body")
    return tag, data[offset + _HEADER : end], end


def encode_value(value: Any) -> bytes:
    """Encode a JSON-safe value tree (payloads, request extras) as one frame."""
    return frame(TAG_VALUE, canon_json(_listify(value)).encode())


def decode_value(body: bytes) -> Any:
    return _tuplify(json.loads(body.decode()))


def _listify(value: Any) -> Any:
    # JSON has no tuple, so tuples are stored as lists; decode restores tuples.
    if isinstance(value, tuple):
        return [_listify(v) for v in value]
    if isinstance(value, list):
        return [_listify(v) for v in value]
    if isinstance(value, dict):
        return {k: _listify(v) for k, v in value.items()}
    return value


def _tuplify(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    if isinstance(value, dict):
        return {k: _tuplify(v) for k, v in value.items()}
    return value


def part_bytes(part: Any) -> bytes:
    """The raw bytes digest() frames for one part.

    Exposed so callers can precompute (and cache) a part's bytes; feeding
    the result back to digest() hashes identically to the original part.
    """
    if isinstance(part, bytes):
        return part
    if isinstance(part, str):
        return part.encode()
    if isinstance(part, int) and not isinstance(part, bool):
        return part.to_bytes((part.bit_length() + 8) // 8 + 1, "big", signed=True)
    return canon_json(_listify(part)).encode()


def _absorb(h, parts) -> None:
    for part in parts:
        raw = part_bytes(part)
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)


def digest(*parts: Any) -> bytes:
    """SHA-256 over length-prefixed parts.

    Parts may be bytes, str, int, or JSON-safe trees; each is framed before
    hashing so distinct part sequences cannot collide.
    """
    h = hashlib.sha256()
    _absorb(h, parts)
    return h.digest()


def digest_prefix(*parts: Any):
    """A reusable hash state with the given parts already absorbed.

    uniform01_from(prefix, *rest) equals uniform01(*parts, *rest); callers
    with a fixed key prefix can pay for it once per run instead of per draw.
    """
    h = hashlib.sha256()
    _absorb(h, parts)
    return h


def uniform01(*parts: Any) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the given parts."""
    return int.from_bytes(digest(*parts)[:8], "big") / float(1 << 64)


def uniform01_from(prefix, *parts: Any) -> float:
    h = prefix.copy()
    _absorb(h, parts)
    return int.from_bytes(h.digest()[:8], "big") / float(1 << 64)


def hexdigest(*parts: Any) -> str:
    return digest(*parts).hex()
