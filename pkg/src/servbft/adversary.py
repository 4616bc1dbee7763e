"""Byzantine shim-node strategies.

A strategy may implement ``filter_input(node, src, msg) -> bool`` (return
False to swallow an incoming message) and ``intercept(node, outputs) ->
outputs`` (rewrite what the node is about to send). A node runs its strategies
in list order, so a later strategy sees the output of an earlier one.

Strategies only ever sign with the node's own identity, so they cannot break
unforgeability: an equivocating primary signs *both* proposals itself.
Byzantine executors are configured separately (see ``executor``).
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from .core import (NOOP, Batch, Error, ErrorKind, Execute, Identity, Preprepare, Scheme,
                   SignedMessage, Transaction, digest_of, sign)
from .simnet import Outbound

log = logging.getLogger(__name__)


class AttackKind(enum.Enum):
    REQUEST_IGNORANCE = "RequestIgnorance"
    UNSUCCESSFUL_CONSENSUS = "UnsuccessfulConsensus"
    LESS_EXECUTORS = "LessExecutors"
    NODE_EXCLUSION = "NodeExclusion"
    EQUIVOCATION = "Equivocation"
    DUPLICATE_SPAWN_PRIMARY = "DuplicateSpawnPrimary"
    DUPLICATE_SPAWN_OLD_PRIMARY = "DuplicateSpawnOldPrimary"
    BYZANTINE_ABORT_DELAY = "ByzantineAbortDelay"


def _body(msg: Any) -> Any:
    return msg.payload if isinstance(msg, SignedMessage) else msg


def _is_spawn(ob: Outbound) -> bool:
    return ob.dst is None and isinstance(_body(ob.msg), Execute)


class Strategy:
    kind: AttackKind

    def filter_input(self, node: Any, src: Identity, msg: Any) -> bool:
        return True

    def intercept(self, node: Any, outputs: list) -> list:
        return outputs


@dataclass
class RequestIgnorance(Strategy):
    """Drop requests from the targeted clients (all clients when ``clients`` is None),
    including the verifier's Error(req) notices about them forwarded by peers."""

    clients: Optional[frozenset] = None
    kind = AttackKind.REQUEST_IGNORANCE

    def _targeted(self, txn: Transaction) -> bool:
        return self.clients is None or txn.client.id in self.clients

    def filter_input(self, node, src, msg):
        body = _body(msg)
        if isinstance(body, Transaction):
            return not self._targeted(body)
        if isinstance(body, Error) and body.kind is ErrorKind.MISSING_REQUEST:
            return not self._targeted(body.txn.payload)
        return True


@dataclass
class UnsuccessfulConsensus(Strategy):
    """Send each Preprepare to only f_R other nodes, so no quorum can form."""

    kind = AttackKind.UNSUCCESSFUL_CONSENSUS

    def intercept(self, node, outputs):
        f = node.cfg.f_r
        allowed = set()
        for i in range(node.cfg.n_r):
            if i != node.me.id and len(allowed) < f:
                allowed.add(i)
        return [ob for ob in outputs
                if not (isinstance(_body(ob.msg), Preprepare) and ob.dst is not None
                        and ob.dst.id not in allowed)]


@dataclass
class LessExecutors(Strategy):
    """Spawn only ``count`` executors per sequence number, across all attempts."""

    count: int = 1
    kind = AttackKind.LESS_EXECUTORS
    _spawned: dict = field(default_factory=dict, repr=False)

    def intercept(self, node, outputs):
        out = []
        for ob in outputs:
            if _is_spawn(ob):
                seq = _body(ob.msg).seq
                n = self._spawned.get(seq, 0)
                if n >= self.count:
                    continue
                self._spawned[seq] = n + 1
            out.append(ob)
        return out


@dataclass
class NodeExclusion(Strategy):
    """Keep ``dark`` nodes out of consensus by never sending them a Preprepare.

    With ``rotate_every`` set, the dark set shifts by one node id every that
    many sequence numbers (experimental: the fixed set is the analysed case).
    """

    dark: frozenset = frozenset()
    rotate_every: int = 0
    kind = AttackKind.NODE_EXCLUSION

    def dark_for(self, node, seq: int) -> frozenset:
        if not self.rotate_every:
            return self.dark
        shift = (seq - 1) // self.rotate_every
        n = node.cfg.n_r
        out = set()
        for d in self.dark:
            cand = (d + shift) % n
            while cand == node.me.id or cand in out:
                cand = (cand + 1) % n
            out.add(cand)
        return frozenset(out)

    def intercept(self, node, outputs):
        out = []
        for ob in outputs:
            body = _body(ob.msg)
            if isinstance(body, Preprepare) and ob.dst is not None \
                    and ob.dst.id in self.dark_for(node, body.seq):
                continue
            out.append(ob)
        return out


def alternative_batch(batch: Batch) -> Batch:
    """A different proposal for the same slot: reversed order, or a no-op."""
    if len(batch) > 1:
        return Batch(tuple(reversed(batch.txns)))
    if batch.noop:
        return batch
    return NOOP


@dataclass
class Equivocation(Strategy):
    """Propose T to most nodes and a conflicting T' at the same (view, seq) to ``group_b``."""

    group_b: frozenset = frozenset()
    kind = AttackKind.EQUIVOCATION
    _alt: dict = field(default_factory=dict, repr=False)

    def intercept(self, node, outputs):
        out = []
        for ob in outputs:
            body = _body(ob.msg)
            if isinstance(body, Preprepare) and ob.dst is not None and ob.dst.id in self.group_b:
                key = (body.view, body.seq)
                alt = self._alt.get(key)
                if alt is None:
                    batch = alternative_batch(body.batch)
                    pp = Preprepare(body.view, body.seq, digest_of(batch), batch)
                    alt = self._alt[key] = sign(pp, node.me, Scheme.MAC)
                ob = replace(ob, msg=alt)
            out.append(ob)
        return out


@dataclass
class DuplicateSpawnPrimary(Strategy):
    """Spawn ``factor`` times as many executors as the protocol asks for."""

    factor: int = 3
    kind = AttackKind.DUPLICATE_SPAWN_PRIMARY

    def intercept(self, node, outputs):
        out = []
        for ob in outputs:
            out.extend([ob] * (self.factor if _is_spawn(ob) else 1))
        return out


@dataclass
class DuplicateSpawnOldPrimary(Strategy):
    """Replay every certificate this node ever collected by spawning fresh executors.

    Works whether or not the node is currently the primary: all it needs is a
    stored certificate, which every node that committed a request holds.
    """

    copies: int = 3
    replay_delay: int = 50_000
    kind = AttackKind.DUPLICATE_SPAWN_OLD_PRIMARY
    _replayed: set = field(default_factory=set, repr=False)

    def intercept(self, node, outputs):
        out = list(outputs)
        for seq in sorted(node.committed):
            if seq in self._replayed:
                continue
            entry = node.committed[seq]
            if entry.batch is None or entry.cert is None:
                continue
            self._replayed.add(seq)
            att = entry.cert.attestations[0]
            ex = Execute(entry.batch, entry.cert, att, entry.digest, seq, entry.cert.view)
            msg = sign(ex, node.me, Scheme.DS)
            out.extend(Outbound(None, msg, delay=self.replay_delay) for _ in range(self.copies))
        return out


@dataclass
class ByzantineAbortDelay(Strategy):
    """Hold back executor spawns for targeted seqs so their reads go stale.

    The i-th spawn for a targeted seq leaves ``delay + i * stagger`` later than
    it should. ``delay=None`` means just past the verifier's abort timer.
    """

    seqs: Optional[frozenset] = None
    delay: Optional[int] = None
    stagger: int = 0
    kind = AttackKind.BYZANTINE_ABORT_DELAY
    _count: dict = field(default_factory=dict, repr=False)

    def intercept(self, node, outputs):
        base = self.delay if self.delay is not None else node.cfg.verifier_abort_timer + 1_000
        out = []
        for ob in outputs:
            if _is_spawn(ob):
                seq = _body(ob.msg).seq
                if self.seqs is None or seq in self.seqs:
                    i = self._count.get(seq, 0)
                    self._count[seq] = i + 1
                    ob = replace(ob, delay=ob.delay + base + i * self.stagger)
            out.append(ob)
        return out


_BUILDERS = {
    AttackKind.REQUEST_IGNORANCE: lambda p: RequestIgnorance(
        frozenset(p["clients"]) if p.get("clients") is not None else None),
    AttackKind.UNSUCCESSFUL_CONSENSUS: lambda p: UnsuccessfulConsensus(),
    AttackKind.LESS_EXECUTORS: lambda p: LessExecutors(int(p.get("count", 1))),
    AttackKind.NODE_EXCLUSION: lambda p: NodeExclusion(frozenset(p.get("dark", ())),
                                                       int(p.get("rotate_every", 0))),
    AttackKind.EQUIVOCATION: lambda p: Equivocation(frozenset(p.get("group_b", ()))),
    AttackKind.DUPLICATE_SPAWN_PRIMARY: lambda p: DuplicateSpawnPrimary(int(p.get("factor", 3))),
    AttackKind.DUPLICATE_SPAWN_OLD_PRIMARY: lambda p: DuplicateSpawnOldPrimary(
        int(p.get("copies", 3)), int(p.get("replay_delay", 50_000))),
    AttackKind.BYZANTINE_ABORT_DELAY: lambda p: ByzantineAbortDelay(
        frozenset(p["seqs"]) if p.get("seqs") is not None else None,
        p.get("delay"), int(p.get("stagger", 0))),
}


def build_strategy(name: str, params: Optional[dict] = None) -> Strategy:
    """Instantiate a strategy from its scenario-file name and parameters."""
    try:
        kind = AttackKind(name)
    except ValueError:
        raise ValueError(f"unknown attack strategy {name!r}; "
                         f"choose from {[k.value for k in AttackKind]}") from None
    return _BUILDERS[kind](params or {})
