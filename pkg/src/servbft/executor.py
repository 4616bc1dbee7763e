"""Spawned serverless executors.

An executor lives for exactly one Execute message: it checks the commit
certificate, runs the batch op by op (one storage round-trip per uncached
read), buffers writes locally and reports a Verify to the verifier. It never
writes to storage and never spawns anything.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Any, Optional

from .core import (STORAGE, VERIFIER, Commit, Compute, Config, Execute, Fetch,
                   FetchReply, Identity, Read, Role, RwSet, Scheme, SignedMessage, Verify, Write,
                   digest_of, sign, validate_certificate, verify_signed)
from .simnet import Outbound, TimingModel

log = logging.getLogger(__name__)


class ExecutorStrategy(enum.Enum):
    HONEST = "Honest"
    WRONG_RESULT = "WrongResult"
    SILENT = "Silent"
    DUPLICATE = "Duplicate"
    STALE_READ = "StaleRead"


@dataclass(frozen=True)
class ExecutorBehavior:
    strategy: ExecutorStrategy = ExecutorStrategy.HONEST
    copies: int = 100  # Duplicate only

    @property
    def byzantine(self) -> bool:
        return self.strategy is not ExecutorStrategy.HONEST


HONEST = ExecutorBehavior()


def check_execute(msg: Any, cfg: Config, require_cert: bool = True) -> Optional[Execute]:
    """Return the Execute body if the message is well-formed, else None."""
    if not isinstance(msg, SignedMessage) or not isinstance(msg.payload, Execute):
        return None
    if not verify_signed(msg) or msg.signer.role is not Role.SHIM:
        return None
    if require_cert and msg.scheme is not Scheme.DS:
        return None
    ex: Execute = msg.payload
    if ex.digest != digest_of(ex.batch):
        return None
    if not require_cert:
        return ex
    cert = ex.cert
    if cert is None or not validate_certificate(cert, cfg):
        return None
    if cert.digest != ex.digest or cert.seq != ex.seq:
        return None
    commit = ex.commit
    if not verify_signed(commit) or commit.payload != Commit(cert.view, cert.seq, cert.digest):
        return None
    return ex


class Executor:
    has_cpu = True

    def __init__(self, me: Identity, spawner: Identity, cfg: Config,
                 timing: Optional[TimingModel] = None,
                 behavior: ExecutorBehavior = HONEST, require_cert: bool = True,
                 region: str = "cloud"):
        self.me = me
        self.spawner = spawner
        self.cfg = cfg
        self.timing = timing or TimingModel()
        self.behavior = behavior
        self.require_cert = require_cert
        self.region = region
        self.outbox: list = []
        self.job: Optional[Execute] = None
        self.done = False
        self.rejected = False
        # execution cursor
        self._txn = 0
        self._op = 0
        self._base: dict[int, tuple[Optional[int], int]] = {}  # fetched (value, version)
        self._local: dict[int, tuple[Optional[int], int]] = {}  # in-batch (value, write count)
        self._reads: dict[int, int] = {}
        self._writes: dict[int, int] = {}
        self._returns: list = []
        self._rw: list[RwSet] = []
        self._results: list[tuple] = []
        self._waiting: Optional[int] = None
        self._cost = 0
        self._tag = 0

    # -- protocol ----------------------------------------------------------
    def on_message(self, src: Identity, msg: Any) -> None:
        if isinstance(msg, FetchReply):
            if self._waiting is not None and msg.tag == self._tag and msg.key == self._waiting:
                self._base[msg.key] = (msg.value, msg.version)
                self._waiting = None
                self._step()
            return
        if self.job is not None or self.done:
            return  # stateless: one request per instance
        ex = check_execute(msg, self.cfg, self.require_cert)
        if ex is None:
            log.debug("%r: certificate rejected", self.me)
            self.rejected = True
            self.done = True
            return
        self.job = ex
        if self.behavior.strategy is ExecutorStrategy.SILENT:
            self.done = True
            return
        self._step()

    def on_timer(self, key: Any) -> None:
        if key == "compute":
            self._step()

    # -- execution ---------------------------------------------------------
    def _fetch(self, key: int) -> None:
        self._tag += 1
        self._waiting = key
        self.outbox.append(Outbound(STORAGE, Fetch(key, self._tag), delay=self._cost))
        self._cost = 0

    def _observe(self, key: int) -> Any:
        """Value of ``key`` as seen by the running txn, or _PENDING if a fetch went out.

        The recorded read version is the storage version plus the number of
        earlier transactions in this batch that wrote the key, which is exactly
        the version storage will hold when the verifier checks this txn.
        """
        if key in self._writes:
            return self._writes[key]
        base = self._base.get(key)
        if base is None:
            self._fetch(key)
            return _PENDING
        local = self._local.get(key)
        if local is None:
            value, version = base
        else:
            value, version = local[0], base[1] + local[1]
        self._reads.setdefault(key, version)
        return value

    def _step(self) -> None:
        txns = self.job.batch.transactions
        op_cost = self.timing.executor_op
        while self._txn < len(txns):
            ops = txns[self._txn].ops
            while self._op < len(ops):
                op = ops[self._op]
                if isinstance(op, Read):
                    val = self._observe(op.key)
                    if val is _PENDING:
                        return
                    self._returns.append(val)
                elif isinstance(op, Write):
                    if op.src is None:
                        self._writes[op.key] = op.value
                    else:
                        base = self._observe(op.src)
                        if base is _PENDING:
                            return
                        self._writes[op.key] = (base or 0) + op.value
                elif isinstance(op, Compute):
                    self._op += 1
                    self.sim.set_timer(self.me, "compute", op.cost + self._cost)
                    self._cost = 0
                    return
                self._cost += op_cost
                self._op += 1
            self._finish_txn()
        self._report()

    def _finish_txn(self) -> None:
        for key, value in self._writes.items():
            n = self._local[key][1] if key in self._local else 0
            self._local[key] = (value, n + 1)
        self._rw.append(RwSet(tuple(sorted(self._reads.items())), tuple(sorted(self._writes.items()))))
        self._results.append(tuple(self._returns))
        self._reads, self._writes, self._returns = {}, {}, []
        self._txn += 1
        self._op = 0

    def _report(self) -> None:
        ex = self.job
        rw = tuple(self._rw)
        result = tuple(self._results)
        strategy = self.behavior.strategy
        if strategy is ExecutorStrategy.WRONG_RESULT:
            result = _corrupt(result)
            rw = tuple(RwSet(r.reads, tuple((k, (v or 0) + 1) for k, v in r.writes)) for r in rw)
        elif strategy is ExecutorStrategy.STALE_READ:
            rw = tuple(RwSet(tuple((k, max(ver - 1, 0)) for k, ver in r.reads), r.writes) for r in rw)
        body = Verify(ex.batch, ex.cert, ex.commit, rw, result, ex.seq, ex.digest)
        msg = sign(body, self.me, Scheme.DS)
        copies = self.behavior.copies if strategy is ExecutorStrategy.DUPLICATE else 1
        for _ in range(copies):
            self.outbox.append(Outbound(VERIFIER, msg, delay=self._cost))
        self._cost = 0
        self.done = True


class _Pending:
    pass


_PENDING = _Pending()


def _corrupt(result: tuple) -> tuple:
    flipped = tuple(tuple((v or 0) + 1 for v in r) for r in result)
    return flipped + (("forged",),)
