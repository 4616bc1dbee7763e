"""The trusted verifier: matches executor results, validates them against
storage in sequence order, answers clients, and turns client complaints into
Error / Replace notices for the shim.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

from .core import (VERIFIER, Abort, Ack, Batch, Commit, CommitCertificate, Config,
                   ConflictMode, Digest, Error, ErrorKind, Identity, Replace, Response, Role,
                   Scheme, SignedMessage, Transaction, Verify, digest_of, shim, sign,
                   validate_certificate, verify_signed)
from .simnet import Outbound
from .storage import VersionedStore

log = logging.getLogger(__name__)

NORMAL = "normal"
ABORT = "abort"


@dataclass
class RequestState:
    """Everything heard about one ordered batch, keyed by (seq, digest)."""

    seq: int
    digest: Digest
    batch: Batch
    view: int
    senders: set = field(default_factory=set)
    outcomes: dict = field(default_factory=dict)  # outcome bytes -> first Verify body
    counts: dict = field(default_factory=dict)  # outcome bytes -> distinct senders
    matched: bool = False

    @property
    def best(self) -> int:
        return max(self.counts.values(), default=0)


@dataclass
class Parked:
    """A matched batch waiting in the pending list for its turn."""

    seq: int
    digest: Digest
    batch: Batch
    view: int
    tag: str
    verify: Optional[Verify] = None


class Verifier:
    has_cpu = True

    def __init__(self, cfg: Config, store: VersionedStore, expected_executors: Optional[int] = None,
                 require_cert: bool = True):
        self.me = VERIFIER
        self.cfg = cfg
        self.require_cert = require_cert
        self.store = store
        self.expected = expected_executors or cfg.expected_executors()
        self.outbox: list = []
        self.sim: Any = None
        self.k_max = 1
        self.requests: dict[tuple[int, Digest], RequestState] = {}
        self.pi: dict[int, Parked] = {}
        self.done_seqs: dict[int, str] = {}  # seq -> how it left: applied / aborted / noop
        self.responded: dict[tuple, SignedMessage] = {}  # txn key -> Response or Abort
        self.txn_seq: dict[tuple, tuple[int, Digest]] = {}
        self.flagged: dict[tuple, bool] = {}  # Error ref awaiting an Ack
        self.last_notice: dict[tuple, int] = {}
        self.dropped: dict[Identity, int] = {}
        self.observations: list[tuple] = []
        self.validated: list[tuple] = []  # (seq, batch, outcome per txn) in validation order
        self.replaces = 0
        self.aborts = 0

    def _now(self) -> int:
        return self.sim.now if self.sim is not None else 0

    def _broadcast_shim(self, msg: Any) -> None:
        for i in range(self.cfg.n_r):
            self.outbox.append(Outbound(shim(i), msg))

    def _observe(self, rec: tuple) -> None:
        self.observations.append(rec)

    # -- dispatch ----------------------------------------------------------
    def on_message(self, src: Identity, msg: Any) -> None:
        if not isinstance(msg, SignedMessage):
            return
        body = msg.payload
        if isinstance(body, Verify):
            self.on_verify(msg)
        elif isinstance(body, Transaction):
            self.on_client_resubmit(msg)

    def on_timer(self, key: Any) -> None:
        if key[0] == "abort":
            self.on_abort_timer(key[1])

    # -- Verify handling ---------------------------------------------------
    def _well_formed(self, msg: SignedMessage) -> bool:
        v: Verify = msg.payload
        if msg.signer.role is not Role.EXECUTOR or msg.scheme is not Scheme.DS or not verify_signed(msg):
            return False
        if not self.require_cert:  # baselines without a BFT shim
            return v.digest == digest_of(v.batch)
        cert = v.cert
        if not isinstance(cert, CommitCertificate) or cert.seq != v.seq or cert.digest != v.digest:
            return False
        if v.digest != digest_of(v.batch) or not validate_certificate(cert, self.cfg):
            return False
        com = v.commit
        return verify_signed(com) and com.payload == Commit(cert.view, cert.seq, cert.digest)

    def on_verify(self, msg: SignedMessage) -> None:
        v: Verify = msg.payload
        sender = msg.signer
        key = (v.seq, v.digest)
        st = self.requests.get(key)
        # flood guard: finished requests and repeat senders cost one lookup
        if v.seq in self.done_seqs or (st is not None and (st.matched or sender in st.senders)):
            self.dropped[sender] = self.dropped.get(sender, 0) + 1
            return
        if not self._well_formed(msg):
            log.debug("verifier: ill-formed Verify from %r dropped", sender)
            return
        if st is None:
            st = self.requests[key] = RequestState(v.seq, v.digest, v.batch, self._view_of(v))
            for m in v.batch.txns:
                self.txn_seq.setdefault(m.payload.key, key)
        st.senders.add(sender)
        st.view = max(st.view, self._view_of(v))
        out = v.outcome_bytes()
        st.counts[out] = st.counts.get(out, 0) + 1
        st.outcomes.setdefault(out, v)
        self._observe(("verify", v.seq, len(st.senders), st.best))
        unknown = self.cfg.conflict_mode is ConflictMode.UNKNOWN_RW
        if st.counts[out] >= self.cfg.match_quorum:
            st.matched = True
            self.sim and self.sim.cancel_timer(self.me, ("abort", key))
            self._observe(("match", v.seq, len(st.senders), st.best))
            self._matched(Parked(v.seq, v.digest, v.batch, st.view, NORMAL, v))
        elif unknown:
            if len(st.senders) >= self.expected:
                # every executor has answered and no f_E+1 agree: nothing left to wait for
                self.sim and self.sim.cancel_timer(self.me, ("abort", key))
                self._abort_path(st)
            elif self.sim is not None and not self.sim.timer_active(self.me, ("abort", key)):
                self.sim.set_timer(self.me, ("abort", key), self._abort_timeout(v.batch))

    @staticmethod
    def _view_of(v: Verify) -> int:
        return v.cert.view if v.cert is not None else 0

    def _abort_timeout(self, batch: Batch) -> int:
        return self.cfg.verifier_abort_timer + batch.compute_cost()

    def on_abort_timer(self, key: tuple) -> None:
        st = self.requests.get(key)
        if st is None or st.matched or st.seq in self.done_seqs:
            return
        n = len(st.senders)
        if n < 2 * self.cfg.f_e + 1:
            self._observe(("replace", st.seq, n, st.best))
            self.replaces += 1
            txns = st.batch.txns
            if txns:
                self._broadcast_shim(sign(Replace(txns[0]), self.me, Scheme.DS))
        else:
            self._abort_path(st)

    def _abort_path(self, st: RequestState) -> None:
        st.matched = True
        self._observe(("abort-path", st.seq, len(st.senders), st.best))
        self._matched(Parked(st.seq, st.digest, st.batch, st.view, ABORT))

    def _matched(self, entry: Parked) -> None:
        if entry.seq < self.k_max or entry.seq in self.pi:
            return
        if entry.seq != self.k_max:
            self.pi[entry.seq] = entry
            return
        self.ccheck(entry)
        while self.k_max in self.pi:
            self.ccheck(self.pi.pop(self.k_max))

    # -- validation --------------------------------------------------------
    def ccheck(self, entry: Parked) -> None:
        """Validate the batch at k_max against storage, reply, and advance k_max."""
        assert entry.seq == self.k_max
        seq = entry.seq
        outcome = []
        check = self.cfg.conflict_mode is not ConflictMode.NON_CONFLICTING
        v = entry.verify
        for i, m in enumerate(entry.batch.txns):
            txn: Transaction = m.payload
            if txn.key in self.responded:  # ordered twice: only the first counts
                outcome.append("dup")
                continue
            ok = entry.tag == NORMAL
            if ok and check:
                ok = all(self.store.version(k) == ver for k, ver in v.rw[i].reads)
            if ok:
                if v.rw[i].writes:
                    self.store.apply(v.rw[i].writes, seq, self.me, index=i)
                reply = sign(Response(txn.client, txn.nonce, entry.digest, seq, entry.view,
                                      v.result[i]), self.me, Scheme.DS)
                outcome.append("ok")
            else:
                reply = sign(Abort(txn.client, txn.nonce, entry.digest, seq, entry.view),
                             self.me, Scheme.DS)
                self.aborts += 1
                outcome.append("abort")
            self.responded[txn.key] = reply
            self.outbox.append(Outbound(txn.client, reply))
            ref = ("req",) + txn.key
            if self.flagged.pop(ref, None):
                self._broadcast_shim(sign(Ack(ErrorKind.MISSING_REQUEST, 0, txn.key), self.me, Scheme.DS))
        how = "noop" if entry.batch.noop else ("aborted" if entry.tag == ABORT else "applied")
        self.done_seqs[seq] = how
        self.validated.append((seq, entry.batch, tuple(outcome)))
        self._observe(("validate", seq, how, tuple(outcome)))
        note = sign(Response(None, 0, entry.digest, seq, entry.view, tuple(outcome)), self.me, Scheme.DS)
        self._broadcast_shim(note)
        if self.flagged.pop(("seq", seq), None):
            self._broadcast_shim(sign(Ack(ErrorKind.MISSING_SEQ, seq, None), self.me, Scheme.DS))
        self.requests.pop((seq, entry.digest), None)
        self.k_max += 1

    # -- client complaints -------------------------------------------------
    def _rate_limited(self, ref: tuple) -> bool:
        now = self._now()
        last = self.last_notice.get(ref)
        if last is not None and now - last < self.cfg.node_timer:
            return True
        self.last_notice[ref] = now
        return False

    def on_client_resubmit(self, msg: SignedMessage) -> None:
        txn = msg.payload
        if msg.scheme is not Scheme.DS or not verify_signed(msg, txn.client):
            return
        key = txn.key
        prior = self.responded.get(key)
        if prior is not None:
            self._observe(("resubmit", "resend"))
            self.outbox.append(Outbound(txn.client, prior))
            return
        where = self.txn_seq.get(key)
        if where is not None and where[0] in self.pi:
            ref = ("seq", self.k_max)
            self._observe(("resubmit", "error-seq"))
            if not self._rate_limited(ref):
                self.flagged[ref] = True
                self._broadcast_shim(sign(Error(ErrorKind.MISSING_SEQ, self.k_max, None), self.me, Scheme.DS))
        elif where is None:
            ref = ("req",) + key
            self._observe(("resubmit", "error-req"))
            if not self._rate_limited(ref):
                self.flagged[ref] = True
                self._broadcast_shim(sign(Error(ErrorKind.MISSING_REQUEST, 0, msg), self.me, Scheme.DS))
        else:
            ref = ("replace",) + key
            self._observe(("resubmit", "replace"))
            if not self._rate_limited(ref):
                self.replaces += 1
                self._broadcast_shim(sign(Replace(msg), self.me, Scheme.DS))
