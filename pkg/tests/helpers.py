"""Builders shared by the test modules."""

from servbft.core import (Batch, Commit, CommitCertificate, Config, Read, Scheme, Transaction, Write,
                          client, digest_of, shim, sign)
from servbft.harness import Scenario
from servbft.simnet import SECOND
from servbft.workload import WorkloadSpec


def signed_txn(cid, nonce, ops):
    return sign(Transaction(client(cid), nonce, tuple(ops)), client(cid), Scheme.DS)


def rmw(key, delta=1):
    return (Read(key), Write(key, delta, src=key))


def make_batch(*txns):
    return Batch(tuple(txns))


def make_cert(cfg, seq, batch, view=0, signers=None):
    """A commit certificate signed by ``signers`` (default: the first quorum of nodes)."""
    d = digest_of(batch)
    ids = signers if signers is not None else range(cfg.quorum)
    atts = tuple(sign(Commit(view, seq, d), shim(i), Scheme.DS) for i in ids)
    return CommitCertificate(d, seq, view, atts)


def small_scenario(**kw):
    """A cheap scenario for invariant-level tests; keyword args override fields."""
    cfg = kw.pop("config", Config())
    wl = kw.pop("workload", WorkloadSpec(num_clients=4, txns_per_client=5))
    kw.setdefault("duration", 20 * SECOND)
    kw.setdefault("warmup", 0)
    return Scenario(config=cfg, workload=wl, **kw)
