"""Trusted versioned key-value store. Executors read; only the verifier writes."""

from __future__ import annotations

from typing import Any, Iterable, Optional

from .core import STORAGE, VERIFIER, Fetch, FetchReply, Identity, Role, encode
from .simnet import Outbound


class StorageViolation(RuntimeError):
    """A non-verifier tried to write. Always fatal for the run."""


class VersionedStore:
    """Sparse in-memory store over an integer keyspace.

    Keys that were never written hold ``initial_value`` at version 0, so a
    600k-record database costs nothing until it is touched.
    """

    def __init__(self, keyspace: int = 600_000, initial_value: Optional[int] = 0, seed: int = 0):
        self.keyspace = keyspace
        self.initial_value = initial_value
        self.seed = seed
        self.records: dict[int, tuple[Optional[int], int]] = {}
        self.applied: list[tuple[int, int, tuple]] = []  # (seq, index, writes)
        self.write_callers: set[Identity] = set()
        self.fetches = 0

    def _get(self, key: int) -> tuple[Optional[int], int]:
        rec = self.records.get(key)
        if rec is not None:
            return rec
        if 0 <= key < self.keyspace:
            return (self.initial_value, 0)
        return (None, 0)

    def fetch(self, keys: Iterable[int]) -> dict[int, tuple[Optional[int], int]]:
        self.fetches += 1
        return {k: self._get(k) for k in keys}

    def version(self, key: int) -> int:
        return self._get(key)[1]

    def apply(self, writes: dict[int, int] | tuple, seq: int, caller: Identity, index: int = 0) -> None:
        self.write_callers.add(caller)
        if caller != VERIFIER:
            raise StorageViolation(f"{caller!r} attempted a storage write")
        if self.applied and (seq, index) <= self.applied[-1][:2]:
            raise StorageViolation(f"out-of-order apply at seq {seq}.{index}")
        items = tuple(sorted(dict(writes).items()))
        for key, value in items:
            self.records[key] = (value, self._get(key)[1] + 1)
        self.applied.append((seq, index, items))

    def snapshot(self) -> dict[int, tuple[Optional[int], int]]:
        return dict(self.records)

    def snapshot_bytes(self) -> bytes:
        """Header (record count, seed, default value) then sorted (key, value, version) triples.

        Only touched records are listed; every other key in the keyspace holds
        the default value at version 0.
        """
        triples = tuple((k, v, ver) for k, (v, ver) in sorted(self.records.items()))
        return encode(((self.keyspace, self.seed, self.initial_value), triples))


class StorageNode:
    """Network face of the store: answers executor fetches."""

    has_cpu = False

    def __init__(self, store: VersionedStore):
        self.me = STORAGE
        self.store = store
        self.outbox: list = []

    def on_message(self, src: Identity, msg: Any) -> None:
        if isinstance(msg, Fetch) and src.role is Role.EXECUTOR:
            value, version = self.store.fetch([msg.key])[msg.key]
            self.outbox.append(Outbound(src, FetchReply(msg.key, value, version, msg.tag)))

    def on_timer(self, key: Any) -> None:
        pass
