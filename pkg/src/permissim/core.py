"""Core model types: identifiers, messages, permission sets, processors.

A system run proceeds in timeslots 1, 2, 3, ...  At each timeslot every
processor receives a pair (M, M*), where M is the set of messages delivered
by the network this slot and M* is the permission earned by the requests it
made last slot.  The processor then broadcasts a finite set of permitted
messages, issues a finite set of new requests, and moves to its next state.
Protocol inputs are modelled as messages received at timeslot 0.

Messages are terms: a payload (a JSON-safe value tree), an optional
timestamp (present only in timed settings, where it is determined by the
request that earned the permission), and an ordered list of signing
identifiers applied outermost-last.  Signing is structural, not
cryptographic: what keeps signatures meaningful in the authenticated
setting is the broadcast filter `authenticated_filter`, which refuses to
let a processor broadcast a pair signed by someone else unless that exact
pair occurs inside a message the processor has already received.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Optional

from . import codec


# ---------------------------------------------------------------------------
# Identifiers
# ---------------------------------------------------------------------------


class Identifier:
    """A public identifier.  At most one processor owns any identifier.

    The distinguished general (the broadcaster whose value the protocol is
    trying to agree on) has an identifier with is_general set; it belongs
    to no processor.
    """

    __slots__ = ("name", "is_general", "_enc")

    def __init__(self, name: str, is_general: bool = False):
        self.name = name
        self.is_general = is_general
        self._enc = codec.frame(
            codec.TAG_IDENT, codec.encode_value([name, is_general])
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Identifier) and self._enc == other._enc

    def __hash__(self) -> int:
        return hash(self._enc)

    def __lt__(self, other: "Identifier") -> bool:
        return self.name < other.name

    def __repr__(self) -> str:
        return f"Identifier({self.name!r})" + ("*" if self.is_general else "")


GENERAL = Identifier("general", is_general=True)


def _decode_identifier(body: bytes) -> Identifier:
    vtag, vbody, vend = codec.read_frame(body, 0)
    if vtag != codec.TAG_VALUE or vend != len(body):
        raise ValueError("malformed identifier body")
    name, is_general = codec.decode_value(vbody)
    return Identifier(name, bool(is_general))


# ---------------------------------------------------------------------------
# Messages
# ---------------------------------------------------------------------------


class Message:
    """An immutable message term.

    signers[0] is the innermost signature.  The timestamp, if any, lives in
    the innermost core so that peeling signatures off a timed message keeps
    the timestamp (a relayed message stays anchored to the slot whose
    request earned its permission).
    """

    __slots__ = ("payload", "signers", "timestamp", "_enc", "_hash", "_hex")

    def __init__(
        self,
        payload: Any,
        signers: tuple[Identifier, ...] = (),
        timestamp: Optional[int] = None,
    ):
        self.payload = payload
        self.signers = signers
        self.timestamp = timestamp
        core = codec.frame(
            codec.TAG_CORE,
            codec.encode_value(payload)
            + (b"" if timestamp is None else codec.encode_value(timestamp)),
        )
        for ident in signers:
            core = codec.frame(codec.TAG_SIGNED, ident._enc + core)
        self._enc = core
        self._hash = hash(core)
        self._hex: Optional[str] = None

    def encode(self) -> bytes:
        return self._enc

    def hex(self) -> str:
        if self._hex is None:
            self._hex = self._enc.hex()
        return self._hex

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Message) and self._enc == other._enc

    def __hash__(self) -> int:
        return self._hash

    def __lt__(self, other: "Message") -> bool:
        return self._enc < other._enc

    def __repr__(self) -> str:
        sig = ",".join(u.name for u in self.signers)
        ts = "" if self.timestamp is None else f"@{self.timestamp}"
        return f"Msg({self.payload!r}{ts}|{sig})"


def decode_message(data: bytes) -> Message:
    """Inverse of Message.encode (exact round trip)."""
    msg, end = _decode_at(data, 0)
    if end != len(data):
        raise ValueError("trailing bytes after message")
    return msg


def _decode_at(data: bytes, offset: int) -> tuple[Message, int]:
    tag, body, end = codec.read_frame(data, offset)
    signers: list[Identifier] = []
    while tag == codec.TAG_SIGNED:
        itag, ibody, iend = codec.read_frame(body, 0)
        if itag != codec.TAG_IDENT:
            raise ValueError("signed frame lacks identifier")
        signers.append(_decode_identifier(ibody))
        tag, body, _ = codec.read_frame(body, iend)
    if tag != codec.TAG_CORE:
        raise ValueError(f"unexpected tag {tag}")
    vtag, vbody, vend = codec.read_frame(body, 0)
    if vtag != codec.TAG_VALUE:
        raise ValueError("core frame lacks payload")
    payload = codec.decode_value(vbody)
    timestamp = None
    if vend < len(body):
        ttag, tbody, tend = codec.read_frame(body, vend)
        if ttag != codec.TAG_VALUE or tend != len(body):
            raise ValueError("malformed core timestamp")
        timestamp = codec.decode_value(tbody)
    # signers were collected outermost-first
    return Message(payload, tuple(reversed(signers)), timestamp), end


def sign(message: Message, identifier: Identifier) -> Message:
    """Return the ordered pair (identifier, message): message signed once more."""
    return Message(message.payload, message.signers + (identifier,), message.timestamp)


def signed_pairs(message: Message) -> Iterator[tuple[Identifier, Message]]:
    """Yield every signed pair (U, inner) contained in the message.

    The outermost pair comes last.  A message with no signers contains no
    signed pairs.
    """
    for i, ident in enumerate(message.signers):
        yield ident, Message(message.payload, message.signers[:i], message.timestamp)


def contains_signed_pair(message: Message, identifier: Identifier, inner: Message) -> bool:
    """True iff the pair (identifier, inner) occurs within message's signature
    spine.  Equivalent to byte-substring search of the pair's encoding inside
    the message's canonical encoding (the test suite checks this against a
    substring oracle)."""
    target = sign(inner, identifier)
    if len(target._enc) > len(message._enc):
        return False
    for ident, sub in signed_pairs(message):
        if ident == identifier and sub == inner:
            return True
    return False


def base_value_message(value: int, timestamp: Optional[int] = None) -> Message:
    """A general-signed base value: the canonical protocol input form."""
    return Message(value, (GENERAL,), timestamp)


# ---------------------------------------------------------------------------
# Permission sets
# ---------------------------------------------------------------------------


class PermissionSet:
    """A possibly infinite set of messages a permitter response grants.

    Concrete permission sets are compared and serialized through their
    descriptor, a JSON-safe value tree that fully determines membership.
    """

    def contains(self, message: Message) -> bool:
        raise NotImplementedError

    def descriptor(self) -> Any:
        raise NotImplementedError

    @property
    def is_empty(self) -> bool:
        return False

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PermissionSet) and self.descriptor() == other.descriptor()

    def __hash__(self) -> int:
        return hash(codec.canon_json(self.descriptor()))

    def __repr__(self) -> str:
        return f"PermissionSet({self.descriptor()!r})"


class _EmptyPermission(PermissionSet):
    def contains(self, message: Message) -> bool:
        return False

    def descriptor(self) -> Any:
        return ["empty"]

    @property
    def is_empty(self) -> bool:
        return True


class _AllMessages(PermissionSet):
    def contains(self, message: Message) -> bool:
        return True

    def descriptor(self) -> Any:
        return ["all"]


EMPTY_PERMISSION = _EmptyPermission()
ALL_MESSAGES = _AllMessages()


class FiniteMessages(PermissionSet):
    def __init__(self, messages: Iterable[Message]):
        self.messages = frozenset(messages)

    def contains(self, message: Message) -> bool:
        return message in self.messages

    def descriptor(self) -> Any:
        return ["finite", sorted(m.hex() for m in self.messages)]

    @property
    def is_empty(self) -> bool:
        return not self.messages


class PredicatePermission(PermissionSet):
    """An intensional permission set: membership decided by a predicate.

    The (name, params) pair must fully determine the predicate, since
    traces record permission sets by descriptor alone.
    """

    def __init__(self, name: str, params: Any, predicate: Callable[[Message], bool]):
        self.name = name
        self.params = params
        self.predicate = predicate

    def contains(self, message: Message) -> bool:
        return self.predicate(message)

    def descriptor(self) -> Any:
        return ["predicate", self.name, self.params]


class UnionPermission(PermissionSet):
    def __init__(self, parts: Iterable[PermissionSet]):
        flat: list[PermissionSet] = []
        for part in parts:
            if isinstance(part, UnionPermission):
                flat.extend(part.parts)
            elif not part.is_empty:
                flat.append(part)
        self.parts = tuple(flat)

    def contains(self, message: Message) -> bool:
        return any(p.contains(message) for p in self.parts)

    def descriptor(self) -> Any:
        if not self.parts:
            return ["empty"]
        if len(self.parts) == 1:
            return self.parts[0].descriptor()
        return ["union", sorted(
            (codec.canon_json(p.descriptor()) for p in self.parts)
        )]

    @property
    def is_empty(self) -> bool:
        return all(p.is_empty for p in self.parts)


def union_permission(parts: Iterable[PermissionSet]) -> PermissionSet:
    u = UnionPermission(parts)
    if not u.parts:
        return EMPTY_PERMISSION
    if len(u.parts) == 1:
        return u.parts[0]
    return u


class PermittedAccumulator:
    """Running union of the permission sets a processor has received.

    Membership checks short-circuit on an unrestricted grant; finite grants
    are merged into one set, predicate grants kept as a list.
    """

    __slots__ = ("has_all", "finite", "predicates")

    def __init__(self) -> None:
        self.has_all = False
        self.finite: set[Message] = set()
        self.predicates: list[PermissionSet] = []

    def add(self, permission: PermissionSet) -> None:
        if self.has_all or permission.is_empty:
            return
        if isinstance(permission, _AllMessages):
            self.has_all = True
            self.finite.clear()
            self.predicates.clear()
        elif isinstance(permission, FiniteMessages):
            self.finite.update(permission.messages)
        elif isinstance(permission, UnionPermission):
            for part in permission.parts:
                self.add(part)
        else:
            self.predicates.append(permission)

    def allows(self, message: Message) -> bool:
        if self.has_all:
            return True
        if message in self.finite:
            return True
        return any(p.contains(message) for p in self.predicates)


# ---------------------------------------------------------------------------
# Requests
# ---------------------------------------------------------------------------


class Request:
    """A permitter request.

    slot is None in untimed settings.  messages is the message set the
    request is evaluated against (it must come from the requester's message
    state or permitted messages).  extra carries request data such as a
    candidate block; multi-permitter settings require it to be None.
    """

    __slots__ = ("slot", "messages", "extra", "_key")

    def __init__(
        self,
        slot: Optional[int],
        messages: Iterable[Message] = (),
        extra: Any = None,
    ):
        self.slot = slot
        self.messages = frozenset(messages)
        self.extra = codec._tuplify(extra)
        self._key: Optional[str] = None

    def key(self) -> str:
        """Canonical content key (computed on demand; message-set heavy)."""
        if self._key is None:
            self._key = codec.canon_json(
                [
                    "req",
                    self.slot,
                    sorted(m.hex() for m in self.messages),
                    codec._listify(self.extra),
                ]
            )
        return self._key

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Request)
            and self.slot == other.slot
            and self.extra == other.extra
            and self.messages == other.messages
        )

    def __hash__(self) -> int:
        return hash((self.slot, self.extra, self.messages))

    def __repr__(self) -> str:
        return f"Request(slot={self.slot}, |M|={len(self.messages)}, extra={self.extra!r})"


# ---------------------------------------------------------------------------
# Processors
# ---------------------------------------------------------------------------


@dataclass
class ProcessorSpec:
    """A processor: an identifier plus a state diagram.

    init maps the tuple of input messages (received at slot 0) to the
    initial state.  transition consumes this slot's (M, M*) and returns
    (broadcast set, request set, next state).  output maps a state to the
    protocol output it determines, or None; the first state with a non-None
    output fixes the processor's output for good.

    reactive and input_sensitive are enumeration hints: a processor whose
    behaviour ignores received messages (or its input) lets exhaustive run
    enumeration skip branching on deliveries to it (or on its input).
    """

    pid: str
    identifier: Identifier
    init: Callable[[tuple[Message, ...]], Any]
    transition: Callable[
        [Any, frozenset[Message], PermissionSet],
        tuple[Iterable[Message], Iterable[Request], Any],
    ]
    output: Callable[[Any], Optional[int]] = lambda state: None
    reactive: bool = True
    input_sensitive: bool = True


class ContractViolation(Exception):
    """A processor or instance broke a model-level rule."""


def step(
    spec: ProcessorSpec,
    state: Any,
    received: frozenset[Message],
    granted: PermissionSet,
    permitted: Optional[PermittedAccumulator] = None,
) -> tuple[frozenset[Message], frozenset[Request], Any]:
    """Run one transition and normalize its result.

    When a PermittedAccumulator is supplied it must already include this
    slot's grant; every broadcast message is checked against it.
    """
    broadcast, requests, new_state = spec.transition(state, received, granted)
    out_msgs = frozenset(broadcast)
    out_reqs = frozenset(requests)
    for m in out_msgs:
        if not isinstance(m, Message):
            raise ContractViolation(f"{spec.pid}: broadcast of non-message {m!r}")
        if permitted is not None and not permitted.allows(m):
            raise ContractViolation(f"{spec.pid}: broadcast of unpermitted message {m!r}")
    for r in out_reqs:
        if not isinstance(r, Request):
            raise ContractViolation(f"{spec.pid}: non-request {r!r}")
    return out_msgs, out_reqs, new_state


# ---------------------------------------------------------------------------
# Authenticated broadcast filter
# ---------------------------------------------------------------------------


def authenticated_filter(
    me: Identifier,
    message: Message,
    received: Iterable[Message],
    permitted: PermittedAccumulator | PermissionSet,
) -> bool:
    """Decide whether a processor may broadcast `message`.

    The message must be permitted, and every signed pair (U, inner) inside
    it must either carry the processor's own identifier or occur inside
    some message the processor has received.  This is what stops forged
    relays: you can extend a signature chain you have seen with your own
    signature, but you cannot fabricate someone else's.
    """
    if isinstance(permitted, PermittedAccumulator):
        if not permitted.allows(message):
            return False
    else:
        if not permitted.contains(message):
            return False
    received = list(received)
    for ident, inner in signed_pairs(message):
        if ident == me:
            continue
        if not any(contains_signed_pair(r, ident, inner) for r in received):
            return False
    return True


class SignedPairIndex:
    """Incremental index of the signed pairs contained in received messages.

    Scheduler-side fast path for the authenticated filter: membership of a
    pair is one set lookup instead of a scan over all received messages.
    """

    __slots__ = ("pairs",)

    def __init__(self) -> None:
        self.pairs: set[bytes] = set()

    def add(self, message: Message) -> None:
        enc = message._enc
        # every signed pair's encoding is a suffix-nested frame of enc
        offset = 0
        tag, body, _ = codec.read_frame(enc, 0)
        while tag == codec.TAG_SIGNED:
            self.pairs.add(enc[offset:])
            itag, ibody, iend = codec.read_frame(body, 0)
            inner_start = offset + 5 + iend  # header + identifier frame
            offset = inner_start
            tag, body, _ = codec.read_frame(enc, offset)

    def filter_ok(self, me: Identifier, message: Message) -> bool:
        enc = message._enc
        offset = 0
        tag, body, _ = codec.read_frame(enc, 0)
        while tag == codec.TAG_SIGNED:
            itag, ibody, iend = codec.read_frame(body, 0)
            if body[:iend] != me._enc and enc[offset:] not in self.pairs:
                return False
            offset = offset + 5 + iend
            tag, body, _ = codec.read_frame(enc, offset)
        return True
