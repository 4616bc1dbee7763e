"""Domain types, message schema and the modeled authentication layer.

Everything here is an immutable value object. Signatures are simulated: a
SignedMessage carries a ``valid`` flag plus an HMAC tag keyed by the *calling*
identity, so a component can sign anything under its own name but can never
produce a verifying message for somebody else.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import hmac
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional


class Role(enum.IntEnum):
    CLIENT = 0
    SHIM = 1
    EXECUTOR = 2
    VERIFIER = 3
    STORAGE = 4


_ROLE_LETTER = {Role.CLIENT: "C", Role.SHIM: "S", Role.EXECUTOR: "E", Role.VERIFIER: "V", Role.STORAGE: "T"}


class Identity(NamedTuple):
    role: Role
    id: int

    def __repr__(self) -> str:
        return f"{_ROLE_LETTER[self.role]}{self.id}"


VERIFIER = Identity(Role.VERIFIER, 0)
STORAGE = Identity(Role.STORAGE, 0)


def shim(i: int) -> Identity:
    return Identity(Role.SHIM, i)


def client(i: int) -> Identity:
    return Identity(Role.CLIENT, i)


# ---------------------------------------------------------------------------
# canonical serialization

_CACHEABLE: dict[type, bool] = {}
_MEMO: dict[type, dict] = {Identity: {}}  # value type -> {value: encoding}
_FIELDS: dict[type, tuple[str, ...]] = {}


def _field_names(cls: type) -> tuple[str, ...]:
    names = _FIELDS.get(cls)
    if names is None:
        fields = dataclasses.fields(cls)
        names = tuple(f.name for f in fields if not f.name.startswith("_"))
        _FIELDS[cls] = names
        _CACHEABLE[cls] = any(f.name == "_enc" for f in fields)
    return names


def _len(n: int) -> bytes:
    return n.to_bytes(4, "big")


def _encode_into(obj: Any, out: bytearray) -> None:
    cls = type(obj)
    memo = _MEMO.get(cls)
    if memo is not None:
        raw = memo.get(obj)
        if raw is None:
            raw = memo[obj] = _encode_small(obj, cls)
        out += raw
        return
    names = _FIELDS.get(cls)
    if names is not None or (names is None and hasattr(cls, "__dataclass_fields__")):
        cached = getattr(obj, "_enc", None)
        if cached is not None:
            out += cached
            return
        if names is None:
            names = _field_names(cls)
        start = len(out)
        cname = cls.__name__.encode()
        out += b"c" + _len(len(cname)) + cname + _len(len(names))
        for name in names:
            _encode_into(getattr(obj, name), out)
        if _CACHEABLE.get(cls):  # immutable once built: keep the bytes
            object.__setattr__(obj, "_enc", bytes(out[start:]))
    elif obj is None:
        out += b"N"
    elif obj is True:
        out += b"T"
    elif obj is False:
        out += b"F"
    elif isinstance(obj, enum.Enum):
        _MEMO[cls] = {}
        _encode_into(obj, out)
    elif isinstance(obj, int):
        raw = str(obj).encode()
        out += b"i" + _len(len(raw)) + raw
    elif isinstance(obj, str):
        raw = obj.encode()
        out += b"s" + _len(len(raw)) + raw
    elif isinstance(obj, bytes):
        out += b"b" + _len(len(obj)) + obj
    elif isinstance(obj, float):
        raw = repr(obj).encode()
        out += b"f" + _len(len(raw)) + raw
    elif isinstance(obj, tuple) and hasattr(cls, "_fields"):
        cname = cls.__name__.encode()
        out += b"c" + _len(len(cname)) + cname + _len(len(obj))
        for item in obj:
            _encode_into(item, out)
    elif isinstance(obj, (tuple, list)):
        out += b"l" + _len(len(obj))
        for item in obj:
            _encode_into(item, out)
    elif isinstance(obj, (set, frozenset)):
        items = sorted(encode(x) for x in obj)
        out += b"S" + _len(len(items))
        for raw in items:
            out += raw
    elif isinstance(obj, dict):
        items = sorted((encode(k), encode(v)) for k, v in obj.items())
        out += b"d" + _len(len(items))
        for k, v in items:
            out += k + v
    else:
        raise TypeError(f"cannot canonically encode {cls.__name__}")


def _encode_small(obj: Any, cls: type) -> bytes:
    """Encoding of a memoized value type (enums and small named tuples)."""
    if isinstance(obj, enum.Enum):
        name = f"{cls.__name__}.{obj.name}".encode()
        return b"e" + _len(len(name)) + name
    out = bytearray()
    cname = cls.__name__.encode()
    out += b"c" + _len(len(cname)) + cname + _len(len(obj))
    for item in obj:
        _encode_into(item, out)
    return bytes(out)


def encode(obj: Any) -> bytes:
    """Length-prefixed canonical bytes; dataclass fields in declaration order."""
    out = bytearray()
    _encode_into(obj, out)
    return bytes(out)


def _cache_encoding(obj: Any) -> bytes:
    raw = getattr(obj, "_enc", None)
    if raw is None:
        object.__setattr__(obj, "_enc", None)
        raw = encode(obj)
        object.__setattr__(obj, "_enc", raw)
    return raw


class Digest(NamedTuple):
    value: bytes

    def __repr__(self) -> str:
        return "D:" + self.value[:4].hex()


_MEMO[Digest] = {}


def digest_of(payload: Any) -> Digest:
    cached = getattr(payload, "_digest", None)
    if cached is not None:
        return cached
    d = Digest(hashlib.sha256(encode(payload)).digest())
    if hasattr(payload, "_digest"):
        object.__setattr__(payload, "_digest", d)
    return d


# ---------------------------------------------------------------------------
# transactions


@dataclass(frozen=True, slots=True)
class Read:
    key: int


@dataclass(frozen=True, slots=True)
class Write:
    """Write ``value`` to ``key``; with ``src`` set, writes ``read(src) + value``."""

    key: int
    value: int
    src: Optional[int] = None


@dataclass(frozen=True, slots=True)
class Compute:
    cost: int  # simulated microseconds


Op = Read | Write | Compute


@dataclass(frozen=True, slots=True)
class Transaction:
    client: Identity
    nonce: int
    ops: tuple
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)
    _digest: Optional[Digest] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.ops:
            raise ValueError("transaction needs at least one op")
        _cache_encoding(self)

    @property
    def key(self) -> tuple[int, int]:
        return (self.client.id, self.nonce)

    def read_keys(self) -> set[int]:
        keys = {op.key for op in self.ops if isinstance(op, Read)}
        keys.update(op.src for op in self.ops if isinstance(op, Write) and op.src is not None)
        return keys

    def write_keys(self) -> set[int]:
        return {op.key for op in self.ops if isinstance(op, Write)}

    def compute_cost(self) -> int:
        return sum(op.cost for op in self.ops if isinstance(op, Compute))


@dataclass(frozen=True, slots=True)
class Batch:
    """The unit ordered by the shim: client-signed transactions sharing one seq."""

    txns: tuple  # of SignedMessage[Transaction]
    noop: bool = False
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)
    _digest: Optional[Digest] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        _cache_encoding(self)

    def __len__(self) -> int:
        return len(self.txns)

    @property
    def transactions(self) -> list[Transaction]:
        return [m.payload for m in self.txns]

    def read_keys(self) -> set[int]:
        out: set[int] = set()
        for t in self.transactions:
            out |= t.read_keys()
        return out

    def write_keys(self) -> set[int]:
        out: set[int] = set()
        for t in self.transactions:
            out |= t.write_keys()
        return out

    def compute_cost(self) -> int:
        return sum(t.compute_cost() for t in self.transactions)


NOOP = Batch(txns=(), noop=True)


@dataclass(frozen=True, slots=True)
class RwSet:
    """Per-transaction access record: storage read versions and final writes."""

    reads: tuple  # sorted (key, version)
    writes: tuple  # sorted (key, value)

    def __post_init__(self):
        for pairs in (self.reads, self.writes):
            keys = [k for k, _ in pairs]
            if len(keys) != len(set(keys)):
                raise ValueError("duplicate key in rw-set")


# ---------------------------------------------------------------------------
# authentication


class Scheme(enum.Enum):
    DS = "DS"
    MAC = "MAC"


_SECRET = b"servbft-simulated-keyring"


def _key_for(identity: Identity) -> bytes:
    return hmac.new(_SECRET, encode(identity), hashlib.sha256).digest()


_KEYS: dict[Identity, bytes] = {}


def _tag(payload: Any, signer: Identity, keyholder: Identity) -> bytes:
    key = _KEYS.get(keyholder)
    if key is None:
        key = _KEYS[keyholder] = _key_for(keyholder)
    return hmac.new(key, encode(payload) + encode(signer), hashlib.sha256).digest()[:16]


@dataclass(frozen=True, slots=True)
class SignedMessage:
    payload: Any
    signer: Identity
    scheme: Scheme
    valid: bool
    tag: bytes
    _ok: Optional[bool] = field(default=None, init=False, repr=False, compare=False)
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


def sign(payload: Any, signer: Identity, scheme: Scheme = Scheme.DS,
         caller: Optional[Identity] = None) -> SignedMessage:
    """Sign ``payload`` as ``signer``.

    ``caller`` is the component actually holding the pen; it defaults to the
    signer. Claiming somebody else's identity yields ``valid=False`` and a tag
    made with the caller's own key, which never verifies.
    """
    holder = signer if caller is None else caller
    return SignedMessage(payload, signer, scheme, holder == signer, _tag(payload, signer, holder))


def verify_signed(msg: Any, expected: Optional[Identity] = None) -> bool:
    if not isinstance(msg, SignedMessage) or not msg.valid:
        return False
    if expected is not None and msg.signer != expected:
        return False
    ok = msg._ok
    if ok is None:  # messages are immutable, so the check is done once per object
        ok = hmac.compare_digest(msg.tag, _tag(msg.payload, msg.signer, msg.signer))
        object.__setattr__(msg, "_ok", ok)
    return ok


# ---------------------------------------------------------------------------
# protocol messages


@dataclass(frozen=True, slots=True)
class Preprepare:
    view: int
    seq: int
    digest: Digest
    batch: Batch
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Prepare:
    view: int
    seq: int
    digest: Digest
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Commit:
    view: int
    seq: int
    digest: Digest
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class CommitCertificate:
    digest: Digest
    seq: int
    view: int
    attestations: tuple  # of SignedMessage[Commit]
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)
    _checked: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Execute:
    batch: Batch
    cert: Optional[CommitCertificate]
    commit: Optional[SignedMessage]
    digest: Digest
    seq: int
    view: int
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Verify:
    batch: Batch
    cert: Optional[CommitCertificate]
    commit: Optional[SignedMessage]
    rw: tuple  # RwSet per transaction
    result: tuple  # per-transaction tuple of read return values
    seq: int
    digest: Digest
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)

    def outcome_bytes(self) -> bytes:
        return encode((self.result, self.rw))


@dataclass(frozen=True, slots=True)
class Response:
    """Verifier reply. Per transaction to clients; per batch (client=None) to the shim."""

    client: Optional[Identity]
    nonce: int
    digest: Digest
    seq: int
    view: int
    result: tuple
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Abort:
    client: Identity
    nonce: int
    digest: Digest
    seq: int
    view: int
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


class ErrorKind(enum.Enum):
    MISSING_SEQ = "seq"
    MISSING_REQUEST = "req"


@dataclass(frozen=True, slots=True)
class Error:
    kind: ErrorKind
    seq: int  # MISSING_SEQ only
    txn: Optional[SignedMessage]  # MISSING_REQUEST only

    @property
    def ref(self) -> tuple:
        if self.kind is ErrorKind.MISSING_SEQ:
            return ("seq", self.seq)
        return ("req",) + self.txn.payload.key
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Ack:
    kind: ErrorKind
    seq: int
    txn_key: Optional[tuple]

    @property
    def ref(self) -> tuple:
        if self.kind is ErrorKind.MISSING_SEQ:
            return ("seq", self.seq)
        return ("req",) + self.txn_key
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Replace:
    txn: SignedMessage
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class PreparedProof:
    preprepare: SignedMessage  # Preprepare from the view's primary
    prepares: tuple  # SignedMessage[Prepare] from distinct non-primaries

    @property
    def view(self) -> int:
        return self.preprepare.payload.view

    @property
    def seq(self) -> int:
        return self.preprepare.payload.seq
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Checkpoint:
    from_seq: int
    to_seq: int
    state: Digest  # digest over the (seq, batch digest) list in range
    certificates: tuple  # CommitCertificate per seq in (from_seq, to_seq]
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class ViewChange:
    new_view: int
    stable_seq: int
    checkpoint_proof: tuple  # SignedMessage[Checkpoint] x 2f+1, empty when stable_seq == 0
    proofs: tuple  # PreparedProof per prepared seq above stable_seq
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class NewView:
    new_view: int
    votes: tuple  # SignedMessage[ViewChange]
    assignments: tuple  # SignedMessage[Preprepare] in the new view, ascending seq
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


@dataclass(frozen=True, slots=True)
class Fetch:
    key: int
    tag: int


@dataclass(frozen=True, slots=True)
class FetchReply:
    key: int
    value: Optional[int]
    version: int
    tag: int


@dataclass(frozen=True, slots=True)
class Accept:
    """Crash-fault baseline: leader proposal (no signatures needed)."""

    seq: int
    digest: Digest
    batch: Batch


@dataclass(frozen=True, slots=True)
class Accepted:
    seq: int
    digest: Digest


@dataclass(frozen=True, slots=True)
class Reply:
    """Execute-on-shim baseline: a replica's answer to a client."""

    client: Identity
    nonce: int
    seq: int
    result: tuple
    _enc: Optional[bytes] = field(default=None, init=False, repr=False, compare=False)


class MessageKind(enum.Enum):
    ClientRequest = "ClientRequest"
    Preprepare = "Preprepare"
    Prepare = "Prepare"
    Commit = "Commit"
    Execute = "Execute"
    Verify = "Verify"
    Response = "Response"
    Abort = "Abort"
    Error = "Error"
    Replace = "Replace"
    Ack = "Ack"
    ViewChange = "ViewChange"
    NewView = "NewView"
    Checkpoint = "Checkpoint"
    Fetch = "Fetch"
    FetchReply = "FetchReply"
    Accept = "Accept"
    Accepted = "Accepted"
    Reply = "Reply"


_KIND_OF = {
    Transaction: MessageKind.ClientRequest,
    Preprepare: MessageKind.Preprepare,
    Prepare: MessageKind.Prepare,
    Commit: MessageKind.Commit,
    Execute: MessageKind.Execute,
    Verify: MessageKind.Verify,
    Response: MessageKind.Response,
    Abort: MessageKind.Abort,
    Error: MessageKind.Error,
    Replace: MessageKind.Replace,
    Ack: MessageKind.Ack,
    ViewChange: MessageKind.ViewChange,
    NewView: MessageKind.NewView,
    Checkpoint: MessageKind.Checkpoint,
    Fetch: MessageKind.Fetch,
    FetchReply: MessageKind.FetchReply,
    Accept: MessageKind.Accept,
    Accepted: MessageKind.Accepted,
    Reply: MessageKind.Reply,
}


def kind_of(msg: Any) -> MessageKind:
    body = msg.payload if isinstance(msg, SignedMessage) else msg
    return _KIND_OF[type(body)]


# Bytes per message kind. The five shim/executor/verifier sizes are the
# measured values for batches of 100; the remaining kinds are estimates.
MESSAGE_SIZE = {
    MessageKind.ClientRequest: 54,
    MessageKind.Preprepare: 5392,
    MessageKind.Prepare: 216,
    MessageKind.Commit: 220,
    MessageKind.Execute: 3320,
    MessageKind.Verify: 3320,
    MessageKind.Response: 2270,
    MessageKind.Abort: 216,
    MessageKind.Error: 272,
    MessageKind.Replace: 272,
    MessageKind.Ack: 216,
    MessageKind.ViewChange: 2048,
    MessageKind.NewView: 8192,
    MessageKind.Checkpoint: 2048,
    MessageKind.Fetch: 64,
    MessageKind.FetchReply: 96,
    MessageKind.Accept: 5392,
    MessageKind.Accepted: 216,
    MessageKind.Reply: 2270,
}


# ---------------------------------------------------------------------------
# configuration


class ConflictMode(enum.Enum):
    NON_CONFLICTING = "NonConflicting"
    UNKNOWN_RW = "UnknownRw"
    KNOWN_RW = "KnownRw"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CostRates:
    spawn: float = 0.0000002  # dollars per executor invocation
    node_second: float = 0.00001  # dollars per shim node per second


@dataclass(frozen=True)
class Config:
    n_r: int = 4
    f_r: int = 1
    n_e: int = 3
    f_e: int = 1
    # timer durations, simulated microseconds
    client_timer: int = 1_000_000
    node_timer: int = 2_000_000
    retransmit_timer: int = 1_500_000
    verifier_abort_timer: int = 300_000
    view_change_timer: int = 1_000_000
    batch_timeout: int = 5_000
    batch_size: int = 10
    checkpoint_interval: int = 10
    conflict_mode: ConflictMode = ConflictMode.NON_CONFLICTING
    decentralized_spawning: bool = False
    dark_pessimism: bool = False
    cost: CostRates = field(default_factory=CostRates)
    out_of_model: bool = False

    @property
    def quorum(self) -> int:
        return 2 * self.f_r + 1

    @property
    def match_quorum(self) -> int:
        return self.f_e + 1

    def primary_of(self, view: int) -> int:
        return view % self.n_r

    def spawn_per_node(self) -> int:
        return spawn_count(self.n_e, self.n_r, self.f_r, self.dark_pessimism)

    def expected_executors(self) -> int:
        """Executors spawned per request when every node follows the protocol."""
        if self.decentralized_spawning:
            return self.spawn_per_node() * self.n_r
        return self.n_e

    def validate(self) -> None:
        if self.n_r < 3 * self.f_r + 1:
            raise ConfigError(f"n_R={self.n_r} < 3f_R+1={3 * self.f_r + 1}")
        need = 3 * self.f_e + 1 if self.conflict_mode is ConflictMode.UNKNOWN_RW else 2 * self.f_e + 1
        if self.n_e < need and not self.out_of_model:
            raise ConfigError(f"n_E={self.n_e} < {need} required in {self.conflict_mode.value} mode")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.checkpoint_interval < 1:
            raise ConfigError("checkpoint_interval must be positive")


def spawn_count(n_e: int, n_r: int, f_r: int, dark: bool = False) -> int:
    """Executors each shim node spawns under decentralized spawning.

    With ``dark`` the count assumes up to f_R honest nodes are kept in the
    dark, so only f_R+1 honest nodes are guaranteed to spawn.
    """
    if n_e <= n_r:
        return 1
    spawners = f_r + 1 if dark else 2 * f_r + 1
    return math.ceil(n_e / spawners)


def validate_certificate(cert: Any, cfg: Config) -> bool:
    if not isinstance(cert, CommitCertificate):
        return False
    memo = cert._checked  # (n_r, quorum, verdict) from an earlier check of this object
    if memo is not None and memo[0] == cfg.n_r and memo[1] == cfg.quorum:
        return memo[2]
    expected = Commit(cert.view, cert.seq, cert.digest)
    signers = set()
    for att in cert.attestations:
        if not isinstance(att, SignedMessage) or att.scheme is not Scheme.DS:
            continue
        if att.signer.role is not Role.SHIM or not 0 <= att.signer.id < cfg.n_r:
            continue
        if att.payload != expected or not verify_signed(att):
            continue
        signers.add(att.signer)
    ok = len(signers) >= cfg.quorum
    object.__setattr__(cert, "_checked", (cfg.n_r, cfg.quorum, ok))
    return ok
