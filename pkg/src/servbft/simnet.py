"""Deterministic discrete-event network simulator.

Components are plain state machines. The simulator calls
``component.on_message(src, msg)`` and ``component.on_timer(key)``; whatever
the component appended to its outbox during the call is then pushed through
the component's ``intercept`` hook (byzantine strategies live there) and sent.

Every identity owns a single FIFO "CPU": an arriving message waits until the
CPU is free, costs ``TimingModel.recv_cost`` to process, and each outbound
message costs ``TimingModel.send_cost`` before it leaves. This is what makes
throughput saturate; without it the simulated system would have infinite
capacity.
"""

from __future__ import annotations

import hashlib
import heapq
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Protocol

from .core import (Identity, MessageKind, Role, Scheme, SignedMessage, encode, kind_of,
                   verify_signed)

log = logging.getLogger(__name__)

US = 1
MS = 1000
SECOND = 1_000_000

DELIVER = 0
ARRIVE = 1
TIMER = 2


class UnknownIdentity(KeyError):
    pass


class Component(Protocol):
    me: Identity
    outbox: list

    def on_message(self, src: Identity, msg: Any) -> None: ...

    def on_timer(self, key: Any) -> None: ...


@dataclass(frozen=True)
class Outbound:
    dst: Identity
    msg: Any
    delay: int = 0  # extra hold-back before sending (adversary use)


def stream_rng(seed: int, name: str) -> random.Random:
    """Independent generator per named stream; changing one stream's use never shifts another."""
    raw = hashlib.sha256(f"{seed}/{name}".encode()).digest()
    return random.Random(int.from_bytes(raw[:8], "big"))


@dataclass
class Partition:
    start: int
    end: int
    a: frozenset  # identities on one side
    b: frozenset

    def blocks(self, src: Identity, dst: Identity, now: int) -> bool:
        if not self.start <= now < self.end:
            return False
        return (src in self.a and dst in self.b) or (src in self.b and dst in self.a)


@dataclass
class NetworkPolicy:
    """Latency per region pair (microseconds), plus loss/duplication before GST."""

    latency: dict = field(default_factory=dict)  # (region, region) -> base one-way latency
    default_latency: int = 1 * MS
    jitter: int = 0  # uniform extra latency in [0, jitter]
    drop_prob: float = 0.0
    dup_prob: float = 0.0
    gst: int = 0  # drops/dups only apply to messages sent before this time
    partitions: list = field(default_factory=list)
    reliable_kinds: frozenset = frozenset({MessageKind.Fetch, MessageKind.FetchReply})

    def __post_init__(self):
        for p in (self.drop_prob, self.dup_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")

    def base_latency(self, a: str, b: str) -> int:
        lat = self.latency.get((a, b))
        if lat is None:
            lat = self.latency.get((b, a), self.default_latency)
        return lat

    @property
    def max_latency(self) -> int:
        base = max(self.latency.values(), default=self.default_latency)
        return max(base, self.default_latency) + self.jitter


@dataclass
class TimingModel:
    """CPU cost (microseconds) of handling messages. All zero means unlimited capacity."""

    recv_base: int = 2
    mac: int = 1
    ds_sign: int = 20
    ds_verify: int = 40
    per_txn: int = 1
    spawn: int = 200
    executor_op: int = 5
    verifier_check: int = 2
    storage_access: int = 1
    node_execute: int = 8  # per op, when shim nodes execute locally
    send_base: int = 1  # unsigned or forwarded messages

    def recv_cost(self, role: Role, msg: Any, cfg_quorum: int) -> int:
        cost = self.recv_base
        if isinstance(msg, SignedMessage):
            cost += self.ds_verify if msg.scheme is Scheme.DS else self.mac
            body = msg.payload
        else:
            body = msg
        kind = kind_of(msg)
        if kind in (MessageKind.Preprepare, MessageKind.Execute, MessageKind.Verify, MessageKind.Accept):
            cost += self.per_txn * len(body.batch)
        if kind in (MessageKind.Execute, MessageKind.Verify) and body.cert is not None:
            cost += self.ds_verify * cfg_quorum
        if kind is MessageKind.Verify:
            cost += self.verifier_check * len(body.batch)
        if kind in (MessageKind.Fetch, MessageKind.FetchReply):
            cost = self.storage_access
        return cost

    def send_cost(self, msg: Any, fresh_signature: bool) -> int:
        if isinstance(msg, SignedMessage):
            if msg.scheme is Scheme.MAC:
                return self.mac
            return self.ds_sign if fresh_signature else self.send_base
        return self.send_base


class RunTrace:
    """Append-only record of processed events."""

    def __init__(self):
        self.records: list[tuple] = []

    def append(self, rec: tuple) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def to_bytes(self) -> bytes:
        return encode(self.records)

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def lines(self) -> Iterable[str]:
        for at, seqno, event, src, dst, detail in self.records:
            yield f"{at}\t{seqno}\t{event}\t{src!r}\t{dst!r}\t" + " ".join(map(str, detail))


def summarize(msg: Any) -> tuple:
    """Small, cheap, deterministic summary of a message for the trace."""
    body = msg.payload if isinstance(msg, SignedMessage) else msg
    kind = kind_of(msg)
    out: list = [kind.value]
    for name in ("view", "new_view", "seq", "to_seq", "nonce", "key"):
        val = getattr(body, name, None)
        if isinstance(val, int):
            out.append(f"{name}={val}")
    if kind is MessageKind.ClientRequest:
        out.append(f"c={body.client.id}")
    return tuple(out)


class Simulator:
    def __init__(self, policy: NetworkPolicy, seed: int = 0,
                 timing: Optional[TimingModel] = None, quorum: int = 3,
                 trace: bool = True):
        self.policy = policy
        self.seed = seed
        self.timing = timing or TimingModel()
        self.quorum = quorum
        self.now = 0
        self._queue: list = []
        self._seqno = 0
        self.components: dict[Identity, Any] = {}
        self.region: dict[Identity, str] = {}
        self.busy: dict[Identity, int] = {}
        self.busy_total: dict[Identity, int] = {}
        self._timers: dict[tuple, int] = {}  # (owner, key) -> live token
        self.net_rng = stream_rng(seed, "network")
        self.trace = RunTrace()
        self.tracing = trace
        self.processed = 0
        self.sent_counts: dict[MessageKind, int] = {}
        self.dropped = 0
        self.forgeries = 0
        self.audit_signatures = False
        self.observers: list[Callable] = []  # fn(at, src, dst, msg) on delivery
        self.spawn_hook: Optional[Callable[[Identity, Any, str], Identity]] = None
        self.halted: Optional[str] = None

    # -- registration ------------------------------------------------------
    def register(self, comp: Any, region: str = "default") -> None:
        self.components[comp.me] = comp
        self.region[comp.me] = region
        self.busy[comp.me] = 0
        self.busy_total[comp.me] = 0
        comp.sim = self

    def _push(self, at: int, kind: int, payload: tuple) -> None:
        self._seqno += 1
        heapq.heappush(self._queue, (at, self._seqno, kind, payload))

    # -- network -----------------------------------------------------------
    def schedule_send(self, src: Identity, dst: Identity, msg: Any, depart: Optional[int] = None) -> None:
        if src not in self.components:
            raise UnknownIdentity(src)
        if dst not in self.components:
            raise UnknownIdentity(dst)
        t = self.now if depart is None else depart
        kind = kind_of(msg)
        self.sent_counts[kind] = self.sent_counts.get(kind, 0) + 1
        pol = self.policy
        copies = 1
        if t < pol.gst and kind not in pol.reliable_kinds:
            if pol.drop_prob and self.net_rng.random() < pol.drop_prob:
                copies = 0
            elif pol.dup_prob and self.net_rng.random() < pol.dup_prob:
                copies = 2
        for p in pol.partitions:
            if p.blocks(src, dst, t):
                copies = 0
        if copies == 0:
            self.dropped += 1
            return
        base = pol.base_latency(self.region[src], self.region[dst])
        for _ in range(copies):
            lat = base + (self.net_rng.randint(0, pol.jitter) if pol.jitter else 0)
            self._push(t + lat, ARRIVE, (src, dst, msg))

    # -- timers ------------------------------------------------------------
    def set_timer(self, owner: Identity, key: Any, duration: int) -> None:
        self._seqno += 1
        token = self._seqno
        self._timers[(owner, key)] = token
        heapq.heappush(self._queue, (self.now + duration, token, TIMER, (owner, key, token)))

    def cancel_timer(self, owner: Identity, key: Any) -> None:
        self._timers.pop((owner, key), None)

    def timer_active(self, owner: Identity, key: Any) -> bool:
        return (owner, key) in self._timers

    # -- dispatch ----------------------------------------------------------
    def _flush(self, comp: Any, start: int) -> None:
        """Send whatever ``comp`` queued, charging send costs on its CPU."""
        out = comp.outbox
        extra = getattr(comp, "charge", 0)  # local work the handler asked to be billed
        if extra:
            comp.charge = 0
        if not out:
            self.busy[comp.me] = max(self.busy[comp.me], start + extra)
            self.busy_total[comp.me] += extra
            return
        comp.outbox = []
        intercept = getattr(comp, "intercept", None)
        if intercept is not None:
            out = intercept(out)
        t = start + extra
        signed_ids = set()
        timing = self.timing
        for ob in out:
            msg = ob.msg
            fresh = False
            if isinstance(msg, SignedMessage) and msg.signer == comp.me and id(msg) not in signed_ids:
                signed_ids.add(id(msg))
                fresh = True
            t += timing.send_cost(msg, fresh)
            if ob.dst is None:  # spawn a fresh executor
                t += timing.spawn
                dst = self.spawn_hook(comp.me, msg, ob)
            else:
                dst = ob.dst
            self.schedule_send(comp.me, dst, msg, depart=t + ob.delay)
        self.busy_total[comp.me] += t - start
        self.busy[comp.me] = t

    def run(self, until: Optional[int] = None, max_events: Optional[int] = None) -> RunTrace:
        q = self._queue
        comps = self.components
        timing = self.timing
        tracing = self.tracing
        observers = self.observers
        while q and self.halted is None:
            at, seqno, kind, payload = q[0]
            if until is not None and at > until:
                break
            heapq.heappop(q)
            self.now = at
            self.processed += 1
            if kind == ARRIVE:
                src, dst, msg = payload
                comp = comps[dst]
                if self.audit_signatures and isinstance(msg, SignedMessage) and msg.valid \
                        and not verify_signed(msg):
                    self.forgeries += 1
                cost = timing.recv_cost(dst.role, msg, self.quorum) if comp.has_cpu else 0
                if cost == 0:
                    kind, payload = DELIVER, payload
                else:
                    start = max(at, self.busy[dst])
                    done = start + cost
                    self.busy[dst] = done
                    self.busy_total[dst] += cost
                    self._push(done, DELIVER, payload)
                    continue
            if kind == DELIVER:
                src, dst, msg = payload
                comp = comps[dst]
                if tracing:
                    self.trace.append((at, seqno, "deliver", src, dst, summarize(msg)))
                for fn in observers:
                    fn(at, src, dst, msg)
                comp.on_message(src, msg)
                self._flush(comp, max(self.now, self.busy[dst]))
            else:
                owner, key, token = payload
                if self._timers.get((owner, key)) != token:
                    continue
                del self._timers[(owner, key)]
                comp = comps[owner]
                if tracing:
                    self.trace.append((at, seqno, "timer", None, owner, (repr(key),)))
                comp.on_timer(key)
                self._flush(comp, max(self.now, self.busy[owner]))
            if max_events is not None and self.processed >= max_events:
                break
        if until is not None and self.halted is None and (not q or q[0][0] > until):
            self.now = until
        return self.trace

    def kick(self, comp: Any) -> None:
        """Flush a component's outbox outside a handler (used at start-up)."""
        self._flush(comp, max(self.now, self.busy[comp.me]))

    def halt(self, reason: str) -> None:
        self.halted = reason

    @property
    def pending(self) -> int:
        return len(self._queue)
