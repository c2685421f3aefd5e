"""Codec properties: framing, round trips, prefix-freeness, randomness streams."""

import hashlib
import json
import random

from permissim import codec
from permissim.core import GENERAL, Identifier, Message


def random_message(rng: random.Random) -> Message:
    payload = rng.choice(
        [
            0,
            1,
            rng.randrange(-1000, 1000),
            ("vote", f"p{rng.randrange(4)}", rng.randrange(2)),
            ("block", f"b{rng.randrange(9)}", f"m{rng.randrange(4)}", rng.randrange(5)),
            None,
        ]
    )
    signers = tuple(
        Identifier(f"u{rng.randrange(5)}", rng.random() < 0.2)
        for _ in range(rng.randrange(4))
    )
    ts = rng.randrange(1, 10) if rng.random() < 0.5 else None
    return Message(payload, signers, ts)


def test_frame_roundtrip():
    body = b"hello frames"
    data = codec.frame(codec.TAG_CORE, body)
    tag, got, end = codec.read_frame(data)
    assert (tag, got, end) == (codec.TAG_CORE, body, len(data))


def test_read_frame_rejects_truncation():
    data = codec.frame(codec.TAG_VALUE, b"abc")
    try:
        codec.read_frame(data[:-1])
        assert False, "expected truncation error"
    except ValueError:
        pass


def test_encode_value_restores_tuples():
    value = ("vote", ("nested", 3), [1, 2], {"k": (0,)})
    tag, body, _ = codec.read_frame(codec.encode_value(value))
    assert tag == codec.TAG_VALUE
    back = codec.decode_value(body)
    assert back == ("vote", ("nested", 3), (1, 2), {"k": (0,)})


def test_canon_json_is_sorted_and_stable():
    a = codec.canon_json({"b": 1, "a": [2, {"z": 0, "y": 1}]})
    b = codec.canon_json({"a": [2, {"y": 1, "z": 0}], "b": 1})
    assert a == b
    assert a == '{"a":[2,{"y":1,"z":0}],"b":1}'


def test_encodings_are_prefix_free():
    # no encoded message or identifier is a proper prefix of another
    rng = random.Random(7)
    encs = {random_message(rng).encode() for _ in range(1000)}
    encs |= {Identifier(f"u{i}", g)._enc for i in range(5) for g in (False, True)}
    ordered = sorted(encs)
    for a, b in zip(ordered, ordered[1:]):
        assert not (len(a) < len(b) and b.startswith(a)), (a.hex(), b.hex())


def _reference_digest(parts) -> bytes:
    """Independent reimplementation of the part framing and hash."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, bytes):
            raw = part
        elif isinstance(part, str):
            raw = part.encode()
        elif isinstance(part, int) and not isinstance(part, bool):
            n = (part.bit_length() + 8) // 8 + 1
            raw = part.to_bytes(n, "big", signed=True)
        else:
            def listify(v):
                if isinstance(v, (tuple, list)):
                    return [listify(x) for x in v]
                if isinstance(v, dict):
                    return {k: listify(x) for k, x in v.items()}
                return v
            raw = json.dumps(
                listify(part), sort_keys=True, separators=(",", ":"), ensure_ascii=True
            ).encode()
        h.update(len(raw).to_bytes(4, "big"))
        h.update(raw)
    return h.digest()


def test_digest_matches_reference():
    cases = [
        ("query", "pow", 3, "m0", 17, b"\x00\x01"),
        ("fixed", "pos-leader", 0, ("req", None, (), None)),
        (-5, 0, 255, 256, -256),
        ("one",),
    ]
    for parts in cases:
        assert codec.digest(*parts) == _reference_digest(parts)


def test_uniform01_range_and_determinism():
    xs = [codec.uniform01("k", i) for i in range(500)]
    assert all(0.0 <= x < 1.0 for x in xs)
    assert xs == [codec.uniform01("k", i) for i in range(500)]
    # sanity: the stream is not degenerate
    assert len({round(x, 6) for x in xs}) > 450


def test_digest_prefix_stream_is_byte_identical():
    prefix = codec.digest_prefix("query", "pow", 42)
    for pid in ("m0", "m1"):
        for slot in range(1, 30):
            full = codec.uniform01("query", "pow", 42, pid, slot, b"x")
            fast = codec.uniform01_from(prefix, pid, slot, b"x")
            assert full == fast


def test_part_bytes_feeds_digest_identically():
    for part in ["abc", 1234, ("a", 1), {"k": [1, 2]}, b"\x00raw"]:
        assert codec.digest(part) == codec.digest(codec.part_bytes(part))
