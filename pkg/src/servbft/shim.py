"""Shim node: PBFT ordering, executor spawning, suspicion timers, view change
and certificate-only checkpoints.

The ordered unit is a batch of client transactions. A node is *prepared* for a
slot once it holds the primary's Preprepare and 2f Prepares from distinct
non-primary nodes (2f+1 in total), and *committed* once it is prepared and
holds 2f+1 DS-signed Commits, which double as the commit certificate.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .core import (NOOP, VERIFIER, Ack, Batch, Checkpoint, Commit, CommitCertificate, Config,
                   ConflictMode, Digest, Error, ErrorKind, Execute, Identity, NewView,
                   Preprepare, Prepare, PreparedProof, Replace, Response, Role, Scheme,
                   SignedMessage, Transaction, ViewChange, digest_of, shim, sign,
                   validate_certificate, verify_signed)
from .simnet import Outbound

log = logging.getLogger(__name__)


class Phase(enum.Enum):
    PRE_PREPARED = "PrePrepared"
    PREPARED = "Prepared"
    COMMITTED = "Committed"


class Status(enum.Enum):
    NORMAL = "normal"
    VIEW_CHANGE = "view-change"


@dataclass
class Slot:
    """Quorum bookkeeping for one (view, seq)."""

    view: int
    seq: int
    preprepare: Optional[SignedMessage] = None
    digest: Optional[Digest] = None
    batch: Optional[Batch] = None
    phase: Optional[Phase] = None
    prepares: dict = field(default_factory=dict)  # digest -> {signer id: msg}
    commits: dict = field(default_factory=dict)  # digest -> {signer id: msg}
    my_prepare: Optional[SignedMessage] = None
    my_commit: Optional[SignedMessage] = None


@dataclass
class CommittedEntry:
    seq: int
    digest: Digest
    batch: Optional[Batch]  # None when adopted from a checkpoint (certificate only)
    cert: Optional[CommitCertificate]
    view: int
    commit: Optional[SignedMessage] = None  # this node's own Commit, when it sent one


def state_digest(pairs: Iterable[tuple[int, Digest]]) -> Digest:
    return digest_of(tuple(pairs))


def batch_ok(batch: Any) -> bool:
    """Every transaction in the batch carries a genuine client signature."""
    if not isinstance(batch, Batch):
        return False
    for m in batch.txns:
        if not isinstance(m, SignedMessage) or not isinstance(m.payload, Transaction):
            return False
        if m.scheme is not Scheme.DS or not verify_signed(m, m.payload.client):
            return False
    return not (batch.noop and batch.txns)


def valid_proof(proof: Any, cfg: Config) -> bool:
    """Preprepare from the view's primary plus 2f matching Prepares from distinct others."""
    if not isinstance(proof, PreparedProof):
        return False
    pp = proof.preprepare
    if not isinstance(pp, SignedMessage) or not isinstance(pp.payload, Preprepare):
        return False
    body = pp.payload
    primary = shim(cfg.primary_of(body.view))
    if not verify_signed(pp, primary) or body.digest != digest_of(body.batch):
        return False
    want = Prepare(body.view, body.seq, body.digest)
    signers = set()
    for p in proof.prepares:
        if not isinstance(p, SignedMessage) or p.signer.role is not Role.SHIM:
            continue
        if p.signer == primary or not 0 <= p.signer.id < cfg.n_r:
            continue
        if p.payload == want and verify_signed(p):
            signers.add(p.signer.id)
    return len(signers) >= 2 * cfg.f_r


def valid_checkpoint_proof(stable_seq: int, proof: tuple, cfg: Config) -> bool:
    if stable_seq == 0:
        return True
    states = {}
    for m in proof:
        if not isinstance(m, SignedMessage) or not isinstance(m.payload, Checkpoint):
            continue
        if m.signer.role is not Role.SHIM or not verify_signed(m):
            continue
        if m.payload.to_seq != stable_seq:
            continue
        states.setdefault(m.payload.state, set()).add(m.signer.id)
    return any(len(s) >= cfg.quorum for s in states.values())


def valid_view_change(msg: Any, cfg: Config) -> bool:
    if not isinstance(msg, SignedMessage) or not isinstance(msg.payload, ViewChange):
        return False
    if msg.signer.role is not Role.SHIM or not 0 <= msg.signer.id < cfg.n_r:
        return False
    if msg.scheme is not Scheme.DS or not verify_signed(msg):
        return False
    vc = msg.payload
    if not valid_checkpoint_proof(vc.stable_seq, vc.checkpoint_proof, cfg):
        return False
    seen = set()
    for p in vc.proofs:
        if not valid_proof(p, cfg) or p.seq <= vc.stable_seq or p.seq in seen or p.view >= vc.new_view:
            return False
        seen.add(p.seq)
    return True


def compute_assignments(votes: Iterable[ViewChange]) -> tuple[int, list[tuple[int, Batch]]]:
    """Seq range and per-seq batch a new primary must re-propose.

    Returns ``(min_s, [(seq, batch), ...])`` covering ``(min_s, max_s]``: each
    seq takes the batch from the highest-view prepared proof among the votes,
    and seqs without any proof become no-ops.
    """
    votes = list(votes)
    min_s = max((v.stable_seq for v in votes), default=0)
    best: dict[int, PreparedProof] = {}
    for v in votes:
        for p in v.proofs:
            if p.seq <= min_s:
                continue
            cur = best.get(p.seq)
            if cur is None or p.view > cur.view:
                best[p.seq] = p
    max_s = max(best, default=min_s)
    out = []
    for s in range(min_s + 1, max_s + 1):
        p = best.get(s)
        out.append((s, p.preprepare.payload.batch if p is not None else NOOP))
    return min_s, out


def conflicts(reads_a: set, writes_a: set, reads_b: set, writes_b: set) -> bool:
    return bool(writes_a & (reads_b | writes_b)) or bool(reads_a & writes_b)


class ShimNode:
    has_cpu = True

    def __init__(self, me: Identity, cfg: Config, strategies: Optional[list] = None,
                 region: str = "edge"):
        self.me = me
        self.cfg = cfg
        self.divergences = 0
        self.strategies = list(strategies or [])
        self.region = region
        self.outbox: list = []
        self.sim: Any = None
        # consensus
        self.view = 0
        self.status = Status.NORMAL
        self.vc_target = 0
        self.seq_counter = 0
        self.slots: dict[tuple[int, int], Slot] = {}
        self.proofs: dict[int, PreparedProof] = {}
        self.committed: dict[int, CommittedEntry] = {}
        self.ordered_txns: dict[tuple, int] = {}
        self.pending: list[SignedMessage] = []
        self.pending_keys: set = set()
        self.future: list[SignedMessage] = []  # Preprepares for views not yet installed
        self._node_timers: set[int] = set()
        # execution tracking
        self.executed: set[int] = set()
        self.spawned: dict[int, int] = {}  # seq -> view in which this node spawned it
        self.spawn_count = 0
        self._respawned_at: dict[int, int] = {}
        # KnownRw planning
        self.plan_next = 1
        self.plan_queue: list[int] = []
        self.locks: dict[int, Optional[tuple[set, set]]] = {}
        # recovery
        self.outstanding: dict[tuple, SignedMessage] = {}
        self.replaced: set = set()
        self.vc_votes: dict[int, dict[int, SignedMessage]] = {}
        self.vc_attempts = 0
        self.nv_sent: set[int] = set()
        self.views_installed: list[int] = [0]
        self.suspicions = 0
        # checkpoints
        self.last_cp = 0
        self.stable_seq = 0
        self.stable_proof: tuple = ()
        self.cp_votes: dict[int, dict[Digest, dict[int, SignedMessage]]] = {}
        self.stable_history: list[int] = []

    # -- helpers -----------------------------------------------------------
    @property
    def f(self) -> int:
        return self.cfg.f_r

    @property
    def primary(self) -> Identity:
        return shim(self.cfg.primary_of(self.view))

    @property
    def is_primary(self) -> bool:
        return self.cfg.primary_of(self.view) == self.me.id

    def _now(self) -> int:
        return self.sim.now if self.sim is not None else 0

    def _set_timer(self, key: Any, duration: int) -> None:
        if self.sim is not None:
            self.sim.set_timer(self.me, key, duration)

    def _cancel_timer(self, key: Any) -> None:
        if self.sim is not None:
            self.sim.cancel_timer(self.me, key)

    def _timer_active(self, key: Any) -> bool:
        return self.sim is not None and self.sim.timer_active(self.me, key)

    def _send(self, dst: Identity, msg: Any) -> None:
        self.outbox.append(Outbound(dst, msg))

    def _broadcast(self, msg: Any) -> None:
        for i in range(self.cfg.n_r):
            if i != self.me.id:
                self.outbox.append(Outbound(shim(i), msg))

    def _slot(self, view: int, seq: int) -> Slot:
        s = self.slots.get((view, seq))
        if s is None:
            s = self.slots[(view, seq)] = Slot(view, seq)
        return s

    def intercept(self, outputs: list) -> list:
        for s in self.strategies:
            outputs = s.intercept(self, outputs)
        return outputs

    # -- dispatch ----------------------------------------------------------
    def on_message(self, src: Identity, msg: Any) -> None:
        for s in self.strategies:
            if not s.filter_input(self, src, msg):
                return
        body = msg.payload if isinstance(msg, SignedMessage) else msg
        if isinstance(body, Transaction):
            self.on_client_request(src, msg)
        elif isinstance(body, Preprepare):
            self.on_preprepare(src, msg)
        elif isinstance(body, Prepare):
            self.on_prepare(src, msg)
        elif isinstance(body, Commit):
            self.on_commit(src, msg)
        elif isinstance(body, Response):
            self.on_response(msg)
        elif isinstance(body, Error):
            self.on_error(src, msg)
        elif isinstance(body, Ack):
            self.on_ack(msg)
        elif isinstance(body, Replace):
            self.on_replace(msg)
        elif isinstance(body, ViewChange):
            self.on_view_change(msg)
        elif isinstance(body, NewView):
            self.on_new_view(msg)
        elif isinstance(body, Checkpoint):
            self.on_checkpoint(msg)

    def on_timer(self, key: Any) -> None:
        kind = key[0] if isinstance(key, tuple) else key
        if kind == "batch":
            if self.is_primary and self.status is Status.NORMAL and self.pending:
                self._propose_pending()
        elif kind == "node":
            seq = key[1]
            self._node_timers.discard(seq)
            if seq not in self.committed and self.status is Status.NORMAL:
                log.info("%r: node timer for seq %d expired", self.me, seq)
                self.suspicions += 1
                self.start_view_change(self.view + 1)
        elif kind == "rt":
            if key[1] in self.outstanding:
                log.info("%r: retransmit timer for %s expired", self.me, key[1])
                self.suspicions += 1
                self.start_view_change(self.view + 1)
        elif kind == "vc":
            if self.status is Status.VIEW_CHANGE and self.vc_target == key[1]:
                self.start_view_change(key[1] + 1)

    # -- normal case -------------------------------------------------------
    def on_client_request(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage) or msg.scheme is not Scheme.DS \
                or not verify_signed(msg, msg.payload.client):
            log.debug("%r: malformed client request dropped", self.me)
            return
        if self.is_primary:
            if self.status is Status.NORMAL:
                self._admit(msg)
        elif src.role is Role.CLIENT:
            self._send(self.primary, msg)

    def _admit(self, msg: SignedMessage) -> None:
        key = msg.payload.key
        if key in self.pending_keys:
            return
        seq = self.ordered_txns.get(key)
        if seq is not None:
            self._retry_seq(seq)
            return
        self.pending.append(msg)
        self.pending_keys.add(key)
        if len(self.pending) >= self.cfg.batch_size:
            self._propose_pending()
        elif not self._timer_active("batch"):
            self._set_timer("batch", self.cfg.batch_timeout)

    def _propose_pending(self) -> None:
        while self.pending:
            take = self.pending[:self.cfg.batch_size]
            del self.pending[:self.cfg.batch_size]
            for m in take:
                self.pending_keys.discard(m.payload.key)
            self.propose(Batch(tuple(take)))
            if len(self.pending) < self.cfg.batch_size:
                break
        if self.pending:
            self._set_timer("batch", self.cfg.batch_timeout)
        else:
            self._cancel_timer("batch")

    def propose(self, batch: Batch) -> int:
        self.seq_counter += 1
        seq = self.seq_counter
        pp = sign(Preprepare(self.view, seq, digest_of(batch), batch), self.me, Scheme.MAC)
        self._broadcast(pp)
        self._accept(pp)
        return seq

    def on_preprepare(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage):
            return
        body: Preprepare = msg.payload
        if body.view > self.view:  # new primary already running; replay after NewView
            self.future.append(msg)
            return
        if self.status is not Status.NORMAL or body.view != self.view \
                or not verify_signed(msg, self.primary):
            return
        if body.seq <= self.stable_seq or body.digest != digest_of(body.batch) or not batch_ok(body.batch):
            log.debug("%r: ill-formed Preprepare for seq %d", self.me, body.seq)
            return
        slot = self.slots.get((body.view, body.seq))
        if slot is not None and slot.preprepare is not None:
            if slot.digest != body.digest:
                log.info("%r: equivocation suspected at view %d seq %d", self.me, body.view, body.seq)
                self.suspicions += 1
            else:  # retransmission: help laggards by repeating our votes
                if slot.my_prepare is not None:
                    self._broadcast(slot.my_prepare)
                if slot.my_commit is not None:
                    self._broadcast(slot.my_commit)
            return
        self._accept(msg)

    def _accept(self, pp: SignedMessage) -> None:
        body: Preprepare = pp.payload
        slot = self._slot(body.view, body.seq)
        slot.preprepare, slot.digest, slot.batch = pp, body.digest, body.batch
        slot.phase = Phase.PRE_PREPARED
        for m in body.batch.txns:
            self.ordered_txns.setdefault(m.payload.key, body.seq)
        if not self.is_primary:
            prep = sign(Prepare(body.view, body.seq, body.digest), self.me, Scheme.MAC)
            slot.my_prepare = prep
            slot.prepares.setdefault(body.digest, {})[self.me.id] = prep
            self._broadcast(prep)
            if body.seq not in self.committed:
                self._node_timers.add(body.seq)
                self._set_timer(("node", body.seq), self.cfg.node_timer)
        self._check_prepared(slot)

    def _current_view_floor(self) -> int:
        return self.vc_target if self.status is Status.VIEW_CHANGE else self.view

    def on_prepare(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage):
            return
        body: Prepare = msg.payload
        signer = msg.signer
        if body.view < self._current_view_floor() or signer.role is not Role.SHIM \
                or signer.id == self.cfg.primary_of(body.view) or not 0 <= signer.id < self.cfg.n_r:
            return
        if body.seq <= self.stable_seq or not verify_signed(msg):
            return
        slot = self._slot(body.view, body.seq)
        slot.prepares.setdefault(body.digest, {}).setdefault(signer.id, msg)
        if self.status is Status.NORMAL and body.view == self.view:
            self._check_prepared(slot)

    def _check_prepared(self, slot: Slot) -> None:
        if slot.phase is not Phase.PRE_PREPARED:
            return
        votes = slot.prepares.get(slot.digest, {})
        if len(votes) < 2 * self.f:
            return
        slot.phase = Phase.PREPARED
        chosen = tuple(votes[i] for i in sorted(votes)[:2 * self.f])
        self.proofs[slot.seq] = PreparedProof(slot.preprepare, chosen)
        com = sign(Commit(slot.view, slot.seq, slot.digest), self.me, Scheme.DS)
        slot.my_commit = com
        slot.commits.setdefault(slot.digest, {})[self.me.id] = com
        self._broadcast(com)
        self._check_committed(slot)

    def on_commit(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage):
            return
        body: Commit = msg.payload
        signer = msg.signer
        if body.view < self._current_view_floor() or signer.role is not Role.SHIM \
                or not 0 <= signer.id < self.cfg.n_r:
            return
        if body.seq <= self.stable_seq or msg.scheme is not Scheme.DS or not verify_signed(msg):
            return
        slot = self._slot(body.view, body.seq)
        slot.commits.setdefault(body.digest, {}).setdefault(signer.id, msg)
        if self.status is Status.NORMAL and body.view == self.view:
            self._check_committed(slot)

    def _check_committed(self, slot: Slot) -> None:
        if slot.phase is not Phase.PREPARED:
            return
        votes = slot.commits.get(slot.digest, {})
        if len(votes) < self.cfg.quorum:
            return
        slot.phase = Phase.COMMITTED
        atts = tuple(votes[i] for i in sorted(votes)[:self.cfg.quorum])
        cert = CommitCertificate(slot.digest, slot.seq, slot.view, atts)
        self._mark_committed(slot.seq, slot.digest, slot.batch, cert, slot.view, slot.my_commit)

    def _mark_committed(self, seq: int, digest: Digest, batch: Optional[Batch],
                        cert: CommitCertificate, view: int,
                        commit: Optional[SignedMessage] = None) -> None:
        if seq in self._node_timers:
            self._node_timers.discard(seq)
            self._cancel_timer(("node", seq))
        entry = self.committed.get(seq)
        if entry is None:
            entry = self.committed[seq] = CommittedEntry(seq, digest, batch, cert, view, commit)
        else:
            if entry.digest != digest:  # would be a safety breach; monitors report it
                log.error("%r: seq %d committed with two digests", self.me, seq)
                self.divergences += 1
                return
            if entry.batch is None and batch is not None:
                entry.batch = batch
            if view >= entry.view:
                entry.cert, entry.view = cert, view
                entry.commit = commit or entry.commit
        if batch is not None:
            for m in batch.txns:
                self.ordered_txns.setdefault(m.payload.key, seq)
        self._plan(seq)
        self._maybe_checkpoint()

    # -- spawning ----------------------------------------------------------
    def is_spawner(self) -> bool:
        return self.cfg.decentralized_spawning or self.is_primary

    def spawn_per_request(self) -> int:
        if self.cfg.decentralized_spawning:
            return self.cfg.spawn_per_node()
        return self.cfg.n_e

    def _spawn(self, seq: int) -> bool:
        entry = self.committed.get(seq)
        if entry is None or entry.batch is None or entry.cert is None:
            return False
        commit = entry.commit if entry.commit is not None and entry.commit.payload.view == entry.cert.view \
            else entry.cert.attestations[0]
        ex = Execute(entry.batch, entry.cert, commit, entry.digest, seq, entry.cert.view)
        msg = sign(ex, self.me, Scheme.DS)
        n = self.spawn_per_request()
        self.outbox.extend(Outbound(None, msg) for _ in range(n))
        self.spawn_count += n
        self.spawned[seq] = self.view
        self._respawned_at[seq] = self._now()
        return True

    def _retry_seq(self, seq: int) -> None:
        """Primary reaction to a stuck seq: re-spawn if committed, else re-propose."""
        if seq in self.executed:
            return
        if seq in self.committed:
            last = self._respawned_at.get(seq)
            if last is not None and self._now() - last < self.cfg.verifier_abort_timer:
                return
            if self.is_spawner():
                self._spawn(seq)
            return
        slot = self.slots.get((self.view, seq))
        if slot is not None and slot.preprepare is not None and self.is_primary:
            self._broadcast(slot.preprepare)

    def _plan(self, seq: int) -> None:
        """Feed committed seqs to the spawner, honouring the KnownRw lock plan."""
        if self.cfg.conflict_mode is not ConflictMode.KNOWN_RW:
            if self.is_spawner() and seq not in self.executed and self.spawned.get(seq) != self.view:
                self._spawn(seq)
            return
        while self.plan_next in self.committed:
            s = self.plan_next
            self.plan_next += 1
            if s not in self.executed:
                self.plan_queue.append(s)
        self._scan_queue()

    def _scan_queue(self) -> None:
        blocked_rw: set = set()
        blocked_w: set = set()
        barrier = False
        for held in self.locks.values():
            if held is None:
                barrier = True
            else:
                blocked_rw |= held[0] | held[1]
                blocked_w |= held[1]
        keep = []
        for s in self.plan_queue:
            batch = self.committed[s].batch
            if batch is None:
                keys = None
            else:
                keys = (batch.read_keys(), batch.write_keys())
            free = not barrier and keys is not None and \
                not (keys[1] & blocked_rw) and not (keys[0] & blocked_w)
            if free:
                self.locks[s] = keys
                if self.is_spawner():
                    self._spawn(s)
            else:
                keep.append(s)
            if keys is None:
                barrier = True
            else:
                blocked_rw |= keys[0] | keys[1]
                blocked_w |= keys[1]
        self.plan_queue = keep

    def on_response(self, msg: Any) -> None:
        """Batch-level notification from the verifier that a seq was validated."""
        if not verify_signed(msg, VERIFIER) or msg.payload.client is not None:
            return
        seq = msg.payload.seq
        if seq in self.executed:
            return
        self.executed.add(seq)
        if self.cfg.conflict_mode is ConflictMode.KNOWN_RW:
            self.locks.pop(seq, None)
            if seq in self.plan_queue:
                self.plan_queue.remove(seq)
            self._scan_queue()

    # -- verifier notices ----------------------------------------------------
    def on_error(self, src: Identity, msg: Any) -> None:
        if not verify_signed(msg, VERIFIER):
            return
        body: Error = msg.payload
        if body.kind is ErrorKind.MISSING_REQUEST and not (
                isinstance(body.txn, SignedMessage) and verify_signed(body.txn, body.txn.payload.client)):
            return
        if src == VERIFIER:
            ref = body.ref
            self.outstanding[ref] = msg
            if not self._timer_active(("rt", ref)):
                self._set_timer(("rt", ref), self.cfg.retransmit_timer)
            if not self.is_primary:
                self._send(self.primary, msg)
        if self.is_primary and self.status is Status.NORMAL:
            self._primary_handle_error(body)

    def _primary_handle_error(self, body: Error) -> None:
        if body.kind is ErrorKind.MISSING_REQUEST:
            self._admit(body.txn)
        else:
            self._retry_seq(body.seq)

    def on_ack(self, msg: Any) -> None:
        if not verify_signed(msg, VERIFIER):
            return
        ref = msg.payload.ref
        if self.outstanding.pop(ref, None) is not None:
            self._cancel_timer(("rt", ref))

    def on_replace(self, msg: Any) -> None:
        if not verify_signed(msg, VERIFIER):
            return
        txn = msg.payload.txn
        key = (self.view, txn.payload.key if isinstance(txn, SignedMessage) else None)
        if key in self.replaced:
            return
        self.replaced.add(key)
        log.info("%r: Replace received in view %d", self.me, self.view)
        self.start_view_change(self.view + 1)

    # -- view change -------------------------------------------------------
    def start_view_change(self, target: int) -> None:
        if target <= self.view:
            return
        if self.status is Status.VIEW_CHANGE and target <= self.vc_target:
            return
        self.status = Status.VIEW_CHANGE
        self.vc_target = target
        for seq in self._node_timers:
            self._cancel_timer(("node", seq))
        self._node_timers.clear()
        self._cancel_timer("batch")
        proofs = tuple(self.proofs[s] for s in sorted(self.proofs) if s > self.stable_seq)
        vc = ViewChange(target, self.stable_seq, self.stable_proof, proofs)
        msg = sign(vc, self.me, Scheme.DS)
        self.vc_votes.setdefault(target, {})[self.me.id] = msg
        self._broadcast(msg)
        self.vc_attempts += 1
        backoff = self.cfg.view_change_timer * (2 ** min(self.vc_attempts - 1, 6))
        self._set_timer(("vc", target), backoff)
        log.info("%r: voting for view %d", self.me, target)
        self._check_vc_quorum(target)

    def on_view_change(self, msg: Any) -> None:
        if not valid_view_change(msg, self.cfg):
            return
        v = msg.payload.new_view
        if v <= self.view:
            return
        self.vc_votes.setdefault(v, {}).setdefault(msg.signer.id, msg)
        current = self.vc_target if self.status is Status.VIEW_CHANGE else self.view
        if v > current:
            # join once f+1 nodes vote for some view above ours: at least one is honest
            voters = {i for w, vs in self.vc_votes.items() if w > current for i in vs}
            if len(voters) >= self.f + 1:
                lowest = min(w for w, vs in self.vc_votes.items() if w > current and vs)
                self.start_view_change(max(lowest, current + 1))
        self._check_vc_quorum(v)

    def _check_vc_quorum(self, v: int) -> None:
        votes = self.vc_votes.get(v, {})
        if self.cfg.primary_of(v) != self.me.id or v in self.nv_sent or v <= self.view \
                or len(votes) < self.cfg.quorum:
            return
        # 2f+1 votes justify the new view even if this node has moved on to a higher target
        chosen = tuple(votes[i] for i in sorted(votes)[:self.cfg.quorum])
        _, assigned = compute_assignments(m.payload for m in chosen)
        pps = tuple(sign(Preprepare(v, s, digest_of(b), b), self.me, Scheme.MAC) for s, b in assigned)
        nv = sign(NewView(v, chosen, pps), self.me, Scheme.DS)
        self.nv_sent.add(v)
        self._broadcast(nv)
        self._install(v, nv.payload)

    def on_new_view(self, msg: Any) -> None:
        if not isinstance(msg, SignedMessage):
            return
        nv: NewView = msg.payload
        v = nv.new_view
        if v <= self.view or not verify_signed(msg, shim(self.cfg.primary_of(v))):
            return
        signers = set()
        for vote in nv.votes:
            if not valid_view_change(vote, self.cfg) or vote.payload.new_view != v:
                log.info("%r: NewView %d carries an invalid vote", self.me, v)
                return
            signers.add(vote.signer.id)
        if len(signers) < self.cfg.quorum:
            return
        _, expected = compute_assignments(m.payload for m in nv.votes)
        got = []
        for pp in nv.assignments:
            if not verify_signed(pp, msg.signer) or not isinstance(pp.payload, Preprepare) \
                    or pp.payload.view != v:
                return
            got.append((pp.payload.seq, pp.payload.digest))
        if got != [(s, digest_of(b)) for s, b in expected]:
            log.info("%r: NewView %d assignments do not match its votes", self.me, v)
            return
        self._install(v, nv)

    def _install(self, v: int, nv: NewView) -> None:
        old_view = self.view
        for w in list(self.vc_votes):
            if w <= v:
                self._cancel_timer(("vc", w))
        self.view = v
        self.status = Status.NORMAL
        self.vc_target = v
        self.vc_attempts = 0
        self.views_installed.append(v)
        self.vc_votes = {w: vs for w, vs in self.vc_votes.items() if w > v}
        self.slots = {k: s for k, s in self.slots.items() if k[0] >= v}
        self.pending.clear()
        self.pending_keys.clear()
        self.ordered_txns = {}
        for e in self.committed.values():
            if e.batch is not None:
                for m in e.batch.txns:
                    self.ordered_txns.setdefault(m.payload.key, e.seq)
        log.info("%r: installed view %d (was %d)", self.me, v, old_view)
        # catch up on checkpoints carried by the votes
        for vote in nv.votes:
            vc = vote.payload
            if vc.stable_seq > self.stable_seq:
                for cp in vc.checkpoint_proof:
                    if self._valid_bundle(cp.payload):
                        self._adopt_checkpoint(cp.payload)
                self._set_stable(vc.stable_seq, vc.checkpoint_proof)
        max_s = self.stable_seq
        for pp in nv.assignments:
            max_s = max(max_s, pp.payload.seq)
            self._accept(pp)
        future, self.future = self.future, []
        for pp in future:
            if pp.payload.view == v:
                self.on_preprepare(self.primary, pp)
            elif pp.payload.view > v:
                self.future.append(pp)
        if self.is_primary:
            self.seq_counter = max_s
            if self.cfg.conflict_mode is ConflictMode.KNOWN_RW:
                for s in sorted(self.locks):
                    if s not in self.executed and self.spawned.get(s) != v:
                        self._spawn(s)
        # re-route outstanding verifier notices to the new primary
        for ref, err in sorted(self.outstanding.items(), key=lambda kv: repr(kv[0])):
            self._set_timer(("rt", ref), self.cfg.retransmit_timer)
            if self.is_primary:
                self._primary_handle_error(err.payload)
            else:
                self._send(self.primary, err)

    # -- checkpoints -------------------------------------------------------
    def _maybe_checkpoint(self) -> None:
        iv = self.cfg.checkpoint_interval
        while all(s in self.committed for s in range(self.last_cp + 1, self.last_cp + iv + 1)):
            lo, hi = self.last_cp, self.last_cp + iv
            entries = [self.committed[s] for s in range(lo + 1, hi + 1)]
            if any(e.cert is None for e in entries):
                return
            state = state_digest((e.seq, e.digest) for e in entries)
            cp = Checkpoint(lo, hi, state, tuple(e.cert for e in entries))
            msg = sign(cp, self.me, Scheme.DS)
            self.last_cp = hi
            self._broadcast(msg)
            self._record_checkpoint(msg)

    def on_checkpoint(self, msg: Any) -> None:
        if not isinstance(msg, SignedMessage) or msg.signer.role is not Role.SHIM \
                or msg.scheme is not Scheme.DS or not verify_signed(msg):
            return
        if not self._valid_bundle(msg.payload):
            log.info("%r: checkpoint bundle from %r rejected", self.me, msg.signer)
            return
        self._adopt_checkpoint(msg.payload)
        self._record_checkpoint(msg)
        self._maybe_checkpoint()

    def _valid_bundle(self, cp: Any) -> bool:
        if not isinstance(cp, Checkpoint) or cp.to_seq <= cp.from_seq:
            return False
        if len(cp.certificates) != cp.to_seq - cp.from_seq:
            return False
        for i, cert in enumerate(cp.certificates):
            if cert.seq != cp.from_seq + 1 + i or not validate_certificate(cert, self.cfg):
                return False
        return cp.state == state_digest((c.seq, c.digest) for c in cp.certificates)

    def _adopt_checkpoint(self, cp: Checkpoint) -> None:
        for cert in cp.certificates:
            entry = self.committed.get(cert.seq)
            if entry is None:
                slot = self.slots.get((cert.view, cert.seq))
                batch = slot.batch if slot is not None and slot.digest == cert.digest else None
                self._mark_committed(cert.seq, cert.digest, batch, cert, cert.view)

    def _record_checkpoint(self, msg: SignedMessage) -> None:
        cp: Checkpoint = msg.payload
        if cp.to_seq <= self.stable_seq:
            return
        by_state = self.cp_votes.setdefault(cp.to_seq, {}).setdefault(cp.state, {})
        by_state.setdefault(msg.signer.id, msg)
        if len(by_state) >= self.cfg.quorum:
            proof = tuple(by_state[i] for i in sorted(by_state)[:self.cfg.quorum])
            self._set_stable(cp.to_seq, proof)

    def _set_stable(self, seq: int, proof: tuple) -> None:
        if seq <= self.stable_seq:
            return
        self.stable_seq = seq
        self.stable_proof = proof
        self.stable_history.append(seq)
        self.last_cp = max(self.last_cp, seq)
        self.slots = {k: s for k, s in self.slots.items() if k[1] > seq}
        self.proofs = {s: p for s, p in self.proofs.items() if s > seq}
        self.cp_votes = {s: v for s, v in self.cp_votes.items() if s > seq}

    # -- audit -------------------------------------------------------------
    def committed_digests(self) -> dict[int, Digest]:
        return {s: e.digest for s, e in self.committed.items()}
