"""Serializability oracle.

Replays every transaction the verifier applied, one at a time in the order it
applied them, over the initial store image using a deliberately simple
reference interpreter, then compares the outcome with the store the run
actually produced, byte for byte in the canonical snapshot format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

from .core import Compute, Read, Write, encode


def interpret(ops: Sequence[Any], lookup) -> tuple[tuple, dict]:
    """Run ``ops`` serially. ``lookup(key)`` returns the committed value.

    Returns the read return values and the final write per key.
    """
    writes: dict[int, Any] = {}
    returns = []

    def value(key):
        return writes[key] if key in writes else lookup(key)

    for op in ops:
        if isinstance(op, Read):
            returns.append(value(op.key))
        elif isinstance(op, Write):
            if op.src is None:
                writes[op.key] = op.value
            else:
                writes[op.key] = (value(op.src) or 0) + op.value
        elif isinstance(op, Compute):
            pass
        else:
            raise TypeError(f"unknown op {op!r}")
    return tuple(returns), writes


@dataclass(frozen=True)
class AppliedTxn:
    seq: int
    index: int
    client: int
    nonce: int
    ops: tuple
    result: Any  # what the client was told


@dataclass
class OracleVerdict:
    passed: bool
    checked: int
    counterexample: Optional[str] = None


@dataclass
class StoreImage:
    keyspace: int
    seed: int
    initial_value: Optional[int]
    records: dict = field(default_factory=dict)

    def get(self, key: int):
        rec = self.records.get(key)
        if rec is not None:
            return rec[0]
        return self.initial_value if 0 <= key < self.keyspace else None

    def version(self, key: int) -> int:
        rec = self.records.get(key)
        return rec[1] if rec is not None else 0

    def to_bytes(self) -> bytes:
        triples = tuple((k, v, ver) for k, (v, ver) in sorted(self.records.items()))
        return encode(((self.keyspace, self.seed, self.initial_value), triples))


def audit_log(validated: Sequence[tuple], responses: dict) -> list[AppliedTxn]:
    """Applied transactions from the verifier's validation log, in validation order.

    ``validated`` holds ``(seq, batch, outcomes)``; ``responses`` maps a txn key
    to the result returned to its client.
    """
    out = []
    for seq, batch, outcomes in validated:
        for i, (m, how) in enumerate(zip(batch.txns, outcomes)):
            if how != "ok":
                continue
            t = m.payload
            out.append(AppliedTxn(seq, i, t.client.id, t.nonce, t.ops, responses.get(t.key)))
    return out


def serializability_oracle(log: Sequence[AppliedTxn], initial: StoreImage,
                           final_snapshot: bytes) -> OracleVerdict:
    image = StoreImage(initial.keyspace, initial.seed, initial.initial_value, dict(initial.records))
    last = (0, -1)
    for n, t in enumerate(log):
        if (t.seq, t.index) <= last:
            return OracleVerdict(False, n, f"log out of order at seq {t.seq}.{t.index}")
        last = (t.seq, t.index)
        result, writes = interpret(t.ops, image.get)
        if t.result is not None and tuple(t.result) != result:
            return OracleVerdict(False, n, f"client {t.client} nonce {t.nonce} at seq {t.seq}: "
                                           f"told {t.result!r}, serial replay gives {result!r}")
        for key, val in writes.items():
            image.records[key] = (val, image.version(key) + 1)
    expected = image.to_bytes()
    if expected == final_snapshot:
        return OracleVerdict(True, len(log))
    return OracleVerdict(False, len(log), "final store differs from serial replay "
                         f"({len(expected)} vs {len(final_snapshot)} snapshot bytes)")
