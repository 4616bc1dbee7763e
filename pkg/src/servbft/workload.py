"""YCSB-style transaction generation and client state machines.

Conflicts come from a small hot-key set: a "hot" transaction increments one
hot key (read-modify-write), a "cold" one touches fresh keys from a slice of
the keyspace that belongs to its client alone. Cold transactions therefore
never conflict with anything, hot ones conflict with every other hot one on
the same key, and the fraction of conflicting transactions tracks the hot
probability.
"""

from __future__ import annotations

import enum
import logging
import random
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from .core import (VERIFIER, Abort, Compute, Identity, Read, Response, Scheme, SignedMessage,
                   Transaction, Write, client, shim, sign, verify_signed)
from .simnet import Outbound

log = logging.getLogger(__name__)


class Mix(enum.Enum):
    READ_WRITE = "read-write"
    READ_ONLY = "read-only"
    WRITE_ONLY = "write-only"


@dataclass(frozen=True)
class WorkloadSpec:
    num_clients: int = 16
    keyspace: int = 600_000
    mix: Mix = Mix.READ_WRITE
    reads_per_txn: int = 1
    writes_per_txn: int = 1
    conflict_rate: float = 0.0
    hot_keys: int = 4
    compute_cost: tuple = (0, 0)  # uniform [lo, hi] simulated microseconds
    closed_loop: bool = True
    txns_per_client: Optional[int] = None  # None: keep issuing until the run ends
    think_time: int = 0
    open_loop_interval: int = 10_000  # open loop only: gap between submissions
    start_spread: int = 1_000  # clients start uniformly within this window

    def validate(self) -> list[str]:
        problems = []
        if self.num_clients < 1:
            problems.append("workload.num_clients must be positive")
        if not 0.0 <= self.conflict_rate <= 0.5:
            problems.append("workload.conflict_rate must lie in [0, 0.5]")
        if self.conflict_rate > 0 and self.hot_keys < 1:
            problems.append("workload.hot_keys must be positive when conflict_rate > 0")
        cold = self.keyspace - self.hot_keys
        per_txn = max(self.reads_per_txn, 0) + max(self.writes_per_txn, 0)
        if cold < self.num_clients * max(per_txn, 1):
            problems.append("workload.keyspace too small for the client population")
        lo, hi = self.compute_cost
        if lo < 0 or hi < lo:
            problems.append("workload.compute_cost must be 0 <= lo <= hi")
        return problems


class TxnGenerator:
    """Deterministic per-client transaction source."""

    def __init__(self, spec: WorkloadSpec, client_id: int, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.client_id = client_id
        cold = spec.keyspace - spec.hot_keys
        self._size = cold // spec.num_clients
        self._base = spec.hot_keys + client_id * self._size
        self._cursor = 0

    def _cold_key(self) -> int:
        k = self._base + self._cursor % self._size
        self._cursor += 1
        return k

    def next_ops(self) -> tuple:
        spec, rng = self.spec, self.rng
        ops: list = []
        hot = spec.conflict_rate > 0 and rng.random() < spec.conflict_rate
        if hot:
            h = rng.randrange(spec.hot_keys)
            ops = [Read(h), Write(h, 1, src=h)]
        elif spec.mix is Mix.READ_ONLY:
            ops = [Read(self._cold_key()) for _ in range(max(spec.reads_per_txn, 1))]
        elif spec.mix is Mix.WRITE_ONLY:
            ops = [Write(self._cold_key(), rng.randrange(1_000_000))
                   for _ in range(max(spec.writes_per_txn, 1))]
        else:
            reads = [self._cold_key() for _ in range(spec.reads_per_txn)]
            ops = [Read(k) for k in reads]
            for j in range(spec.writes_per_txn):
                delta = rng.randrange(1, 1000)
                src = reads[j % len(reads)] if reads else None
                ops.append(Write(self._cold_key(), delta, src=src))
        lo, hi = spec.compute_cost
        if hi > 0:
            ops.append(Compute(rng.randint(lo, hi)))
        return tuple(ops)

    def next(self, nonce: int) -> Transaction:
        return Transaction(client(self.client_id), nonce, self.next_ops())


def conflict_fraction(txns: Sequence[Transaction]) -> float:
    """Fraction of transactions whose read-write set intersects some other's write set
    (or whose writes intersect another's reads), by brute-force pairwise comparison."""
    if not txns:
        return 0.0
    sets = [(t.read_keys(), t.write_keys()) for t in txns]
    hit = [False] * len(sets)
    for i in range(len(sets)):
        ri, wi = sets[i]
        for j in range(i + 1, len(sets)):
            rj, wj = sets[j]
            if (wi & (rj | wj)) or (ri & wj):
                hit[i] = hit[j] = True
    return sum(hit) / len(hit)


@dataclass
class Pending:
    msg: SignedMessage
    sent_at: int
    backoff: int = 0
    retries: int = 0


@dataclass
class Outcome:
    kind: str  # "response" | "abort"
    sent_at: int
    done_at: int
    seq: int
    result: Any = None


class Client:
    """Closed-loop (or open-loop / scripted) client with the verifier retry path."""

    has_cpu = False

    def __init__(self, cid: int, spec: WorkloadSpec, rng: random.Random, n_r: int,
                 client_timer: int, script: Optional[list] = None, region: str = "client"):
        self.me = client(cid)
        self.spec = spec
        self.rng = rng
        self.gen = TxnGenerator(spec, cid, rng)
        self.n_r = n_r
        self.client_timer = client_timer
        self.script = sorted(script, key=lambda e: e[0]) if script is not None else None
        self.region = region
        self.outbox: list = []
        self.sim: Any = None
        self.view = 0
        self.next_nonce = 1
        self.pending: dict[int, Pending] = {}
        self.outcomes: dict[int, Outcome] = {}
        self.issued: list[tuple[int, int]] = []  # (nonce, send time)
        self.conflicting_replies = 0
        self.max_pending = 0
        self.stopped = False

    # -- lifecycle ---------------------------------------------------------
    def start(self) -> None:
        if self.script is not None:
            for i, (at, _ops) in enumerate(self.script):
                self.sim.set_timer(self.me, ("script", i), at)
            return
        spread = self.spec.start_spread
        self.sim.set_timer(self.me, ("next",), self.rng.randint(0, spread) if spread else 0)

    def _budget_left(self) -> bool:
        cap = self.spec.txns_per_client
        return not self.stopped and (cap is None or len(self.issued) < cap)

    def _submit(self, ops: Optional[tuple] = None) -> None:
        nonce = self.next_nonce
        self.next_nonce += 1
        txn = Transaction(self.me, nonce, ops) if ops is not None else self.gen.next(nonce)
        msg = sign(txn, self.me, Scheme.DS)
        now = self.sim.now
        self.pending[nonce] = Pending(msg, now)
        self.max_pending = max(self.max_pending, len(self.pending))
        self.issued.append((nonce, now))
        self.outbox.append(Outbound(shim(self.view % self.n_r), msg))
        self.sim.set_timer(self.me, ("t", nonce), self.client_timer)

    def on_timer(self, key: Any) -> None:
        kind = key[0]
        if kind == "next":
            if self._budget_left() and (not self.spec.closed_loop or not self.pending):
                self._submit()
                if not self.spec.closed_loop:
                    self.sim.set_timer(self.me, ("next",), self.spec.open_loop_interval)
        elif kind == "script":
            self._submit(tuple(self.script[key[1]][1]))
        elif kind == "t":
            p = self.pending.get(key[1])
            if p is None:
                return
            # suspected suppression: go straight to the trusted verifier, backing off
            p.retries += 1
            p.backoff = min(p.backoff + 1, 6)
            self.outbox.append(Outbound(VERIFIER, p.msg))
            self.sim.set_timer(self.me, key, self.client_timer * (2 ** p.backoff))

    def on_message(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage) or not verify_signed(msg, VERIFIER):
            return
        body = msg.payload
        if not isinstance(body, (Response, Abort)) or body.client != self.me:
            return
        kind = "response" if isinstance(body, Response) else "abort"
        prior = self.outcomes.get(body.nonce)
        if prior is not None:
            if prior.kind != kind:
                self.conflicting_replies += 1
            return
        p = self.pending.pop(body.nonce, None)
        if p is None:
            return
        self.sim.cancel_timer(self.me, ("t", body.nonce))
        self.view = max(self.view, body.view)
        self.outcomes[body.nonce] = Outcome(kind, p.sent_at, self.sim.now, body.seq,
                                            body.result if kind == "response" else None)
        if self.script is None and self.spec.closed_loop and self._budget_left():
            think = self.spec.think_time
            if think:
                self.sim.set_timer(self.me, ("next",), think)
            else:
                self._submit()
