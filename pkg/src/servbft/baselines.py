"""Baseline designs the protocol is compared against.

* ``NoShimNode``: a single node batches client requests and spawns executors
  straight away; no consensus, no certificates.
* ``CftNode``: a crash-fault leader/follower shim (Paxos-style accept phase,
  majority quorum, no signatures) that then spawns executors.
* ``PbftReplica``: the ordinary PBFT shim, but every node executes the ordered
  batches itself and replies to clients; no executors and no verifier.
"""

from __future__ import annotations

import logging
from typing import Any, Optional

from .core import (Accept, Accepted, Batch, Config, Execute, Identity, Reply, Role, Scheme,
                   SignedMessage, Transaction, digest_of, shim, sign, verify_signed)
from .oracle import interpret
from .shim import ShimNode
from .simnet import Outbound
from .workload import Client, Outcome

log = logging.getLogger(__name__)


class _Batcher:
    """Shared batching front-end for the leader-based baselines."""

    has_cpu = True

    def __init__(self, me: Identity, cfg: Config, region: str = "edge"):
        self.me = me
        self.cfg = cfg
        self.region = region
        self.outbox: list = []
        self.sim: Any = None
        self.seq = 0
        self.pending: list = []
        self.seen: set = set()
        self.spawn_count = 0
        self.committed: dict = {}

    def _admit(self, msg: Any) -> None:
        if not isinstance(msg, SignedMessage) or not isinstance(msg.payload, Transaction):
            return
        if not verify_signed(msg, msg.payload.client) or msg.payload.key in self.seen:
            return
        self.seen.add(msg.payload.key)
        self.pending.append(msg)
        if len(self.pending) >= self.cfg.batch_size:
            self._cut()
        elif not self.sim.timer_active(self.me, "batch"):
            self.sim.set_timer(self.me, "batch", self.cfg.batch_timeout)

    def _cut(self) -> None:
        while self.pending:
            take, self.pending = self.pending[:self.cfg.batch_size], self.pending[self.cfg.batch_size:]
            self.seq += 1
            self.order(self.seq, Batch(tuple(take)))
            if len(self.pending) < self.cfg.batch_size:
                break
        if self.pending:
            self.sim.set_timer(self.me, "batch", self.cfg.batch_timeout)
        else:
            self.sim.cancel_timer(self.me, "batch")

    def order(self, seq: int, batch: Batch) -> None:
        raise NotImplementedError

    def _spawn(self, seq: int, batch: Batch) -> None:
        ex = Execute(batch, None, None, digest_of(batch), seq, 0)
        msg = sign(ex, self.me, Scheme.MAC)
        self.outbox.extend(Outbound(None, msg) for _ in range(self.cfg.n_e))
        self.spawn_count += self.cfg.n_e

    def on_timer(self, key: Any) -> None:
        if key == "batch" and self.pending:
            self._cut()


class NoShimNode(_Batcher):
    def on_message(self, src: Identity, msg: Any) -> None:
        if src.role is Role.CLIENT:
            self._admit(msg)

    def order(self, seq: int, batch: Batch) -> None:
        self.committed[seq] = digest_of(batch)
        self._spawn(seq, batch)


class CftNode(_Batcher):
    """Leader is node 0; followers acknowledge every Accept."""

    def __init__(self, me: Identity, cfg: Config, region: str = "edge"):
        super().__init__(me, cfg, region)
        self.acks: dict[int, set] = {}
        self.batches: dict[int, Batch] = {}
        self.majority = cfg.n_r // 2 + 1

    @property
    def leader(self) -> bool:
        return self.me.id == 0

    def on_message(self, src: Identity, msg: Any) -> None:
        if isinstance(msg, Accept):
            if src == shim(0) and msg.digest == digest_of(msg.batch):
                self.committed.setdefault(msg.seq, msg.digest)
                self.outbox.append(Outbound(src, Accepted(msg.seq, msg.digest)))
        elif isinstance(msg, Accepted):
            if self.leader and msg.seq in self.acks:
                acks = self.acks[msg.seq]
                acks.add(src.id)
                if len(acks) == self.majority:
                    self._spawn(msg.seq, self.batches.pop(msg.seq))
        elif self.leader and src.role is Role.CLIENT:
            self._admit(msg)

    def order(self, seq: int, batch: Batch) -> None:
        self.batches[seq] = batch
        self.acks[seq] = {self.me.id}
        self.committed[seq] = digest_of(batch)
        acc = Accept(seq, digest_of(batch), batch)
        for i in range(1, self.cfg.n_r):
            self.outbox.append(Outbound(shim(i), acc))


class PbftReplica(ShimNode):
    """PBFT shim node that executes committed batches on its own state copy."""

    def __init__(self, me: Identity, cfg: Config, timing: Any, strategies: Optional[list] = None,
                 region: str = "edge", initial_value: int = 0):
        super().__init__(me, cfg, strategies, region)
        self.timing = timing
        self.state: dict[int, int] = {}
        self.initial_value = initial_value
        self.next_exec = 1
        self.charge = 0

    def is_spawner(self) -> bool:
        return False

    def _plan(self, seq: int) -> None:
        while self.next_exec in self.committed:
            entry = self.committed[self.next_exec]
            if entry.batch is None:
                return  # state transfer of full batches is out of scope for the baseline
            self._execute(self.next_exec, entry.batch)
            self.next_exec += 1

    def _execute(self, seq: int, batch: Batch) -> None:
        lookup = lambda k: self.state.get(k, self.initial_value)  # noqa: E731
        for m in batch.txns:
            txn: Transaction = m.payload
            result, writes = interpret(txn.ops, lookup)
            self.state.update(writes)
            self.charge += self.timing.node_execute * len(txn.ops)
            reply = sign(Reply(txn.client, txn.nonce, seq, result), self.me, Scheme.MAC)
            self.outbox.append(Outbound(txn.client, reply))
        self.executed.add(seq)


class PbftClient(Client):
    """Waits for f_R+1 matching replica replies; retries by broadcasting to all replicas."""

    def __init__(self, *args, f_r: int = 1, **kwargs):
        super().__init__(*args, **kwargs)
        self.f_r = f_r
        self.votes: dict[int, dict[tuple, set]] = {}

    def on_timer(self, key: Any) -> None:
        if key[0] == "t":
            p = self.pending.get(key[1])
            if p is None:
                return
            p.retries += 1
            p.backoff = min(p.backoff + 1, 6)
            for i in range(self.n_r):
                self.outbox.append(Outbound(shim(i), p.msg))
            self.sim.set_timer(self.me, key, self.client_timer * (2 ** p.backoff))
            return
        super().on_timer(key)

    def on_message(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage) or not isinstance(msg.payload, Reply):
            return
        if msg.signer.role is not Role.SHIM or not verify_signed(msg):
            return
        r: Reply = msg.payload
        if r.client != self.me or r.nonce not in self.pending:
            return
        voters = self.votes.setdefault(r.nonce, {}).setdefault((r.seq, r.result), set())
        voters.add(msg.signer.id)
        if len(voters) < self.f_r + 1:
            return
        p = self.pending.pop(r.nonce)
        self.votes.pop(r.nonce, None)
        self.sim.cancel_timer(self.me, ("t", r.nonce))
        self.outcomes[r.nonce] = Outcome("response", p.sent_at, self.sim.now, r.seq, r.result)
        if self.script is None and self.spec.closed_loop and self._budget_left():
            if self.spec.think_time:
                self.sim.set_timer(self.me, ("next",), self.spec.think_time)
            else:
                self._submit()
