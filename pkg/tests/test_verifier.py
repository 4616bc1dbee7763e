from dataclasses import dataclass, field

from hypothesis import given, settings, strategies as st

from helpers import make_batch, make_cert, rmw, signed_txn
from servbft.core import (Abort, Config, ConflictMode, Error, ErrorKind, Identity, Replace, Response,
                          Role, RwSet, Scheme, Verify, client, digest_of, shim, sign)
from servbft.simnet import MS, NetworkPolicy, Simulator
from servbft.verifier import Verifier
from servbft.storage import VersionedStore


@dataclass
class Sink:
    me: Identity
    has_cpu: bool = False
    outbox: list = field(default_factory=list)
    got: list = field(default_factory=list)
    sim: object = None

    def on_message(self, src, msg):
        self.got.append(msg.payload)

    def on_timer(self, key):
        pass


class Rig:
    """Verifier plus sink shim nodes, clients and executors."""

    def __init__(self, cfg=None, n_exec=8, clients=4):
        self.cfg = cfg or Config()
        self.store = VersionedStore(keyspace=1000)
        self.sim = Simulator(NetworkPolicy())
        self.v = Verifier(self.cfg, self.store)
        self.sim.register(self.v, "onprem")
        self.shims = [Sink(shim(i)) for i in range(self.cfg.n_r)]
        self.clients = [Sink(client(i)) for i in range(clients)]
        self.execs = [Sink(Identity(Role.EXECUTOR, i)) for i in range(n_exec)]
        for c in self.shims + self.clients + self.execs:
            self.sim.register(c)

    def verify(self, e, seq, batch, result, rw, at=None, view=0):
        cert = make_cert(self.cfg, seq, batch, view=view)
        body = Verify(batch, cert, cert.attestations[0], rw, result, seq, digest_of(batch))
        self.sim.schedule_send(Identity(Role.EXECUTOR, e), self.v.me, sign(body, Identity(Role.EXECUTOR, e)),
                               depart=at)

    def honest(self, e, seq, batch, version=0, at=None):
        """Outcome of rmw txns on fresh keys read at ``version``."""
        res, rws = [], []
        for m in batch.txns:
            k = m.payload.ops[0].key
            res.append((0,))
            rws.append(RwSet(((k, version),), ((k, 1),)))
        self.verify(e, seq, batch, tuple(res), tuple(rws), at=at)

    def run(self, until=None):
        self.sim.run(until=until)

    def client_msgs(self, i):
        return self.clients[i].got


def b(cid, nonce, key):
    return make_batch(signed_txn(cid, nonce, rmw(key)))


def test_match_applies_and_replies():
    r = Rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.run()
    assert r.v.k_max == 1
    r.honest(1, 1, batch)
    r.run()
    assert r.v.k_max == 2
    assert r.store.fetch([10])[10] == (1, 1)
    [resp] = r.client_msgs(0)
    assert isinstance(resp, Response) and resp.result == (0,)
    for s in r.shims:  # batch-level notice to every shim node
        assert any(isinstance(m, Response) and m.client is None and m.seq == 1 for m in s.got)


def test_repeat_sender_does_not_count_twice():
    r = Rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.honest(0, 1, batch)
    r.run()
    assert r.v.k_max == 1 and r.v.dropped[Identity(Role.EXECUTOR, 0)] == 1


def test_ill_formed_verify_is_ignored():
    r = Rig()
    batch = b(0, 1, 10)
    cert = make_cert(r.cfg, 1, batch, signers=[0, 1])  # below quorum
    body = Verify(batch, cert, cert.attestations[0], (RwSet(((10, 0),), ((10, 1),)),), ((0,),), 1,
                  digest_of(batch))
    for e in (0, 1):
        r.sim.schedule_send(Identity(Role.EXECUTOR, e), r.v.me, sign(body, Identity(Role.EXECUTOR, e)))
    r.run()
    assert r.v.k_max == 1 and r.v.requests == {}


def test_mismatched_results_do_not_match():
    r = Rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.verify(1, 1, batch, ((5,),), (RwSet(((10, 0),), ((10, 6),)),))
    r.run()
    assert r.v.k_max == 1


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(1, 7)))
def test_results_are_validated_in_sequence_order(order):
    r = Rig()
    for seq in order:
        batch = b(0, seq, 100 + seq)
        for e in (0, 1):
            r.honest(e, seq, batch)
        r.run()
    assert r.v.k_max == 7
    assert [s for s, _, _ in r.v.validated] == list(range(1, 7))
    assert [(s, i) for s, i, _ in r.store.applied] == [(s, 0) for s in range(1, 7)]


def test_stale_read_is_aborted():
    r = Rig(Config(conflict_mode=ConflictMode.KNOWN_RW))
    first, second = b(0, 1, 10), b(1, 1, 10)
    for e in (0, 1):
        r.honest(e, 1, first)
        r.honest(e + 2, 2, second, version=0)  # read before seq 1 was applied
    r.run()
    assert r.v.k_max == 3
    assert isinstance(r.client_msgs(1)[0], Abort)
    assert r.store.fetch([10])[10] == (1, 1)


def test_non_conflicting_mode_skips_version_check():
    r = Rig()
    first, second = b(0, 1, 10), b(1, 1, 10)
    for e in (0, 1):
        r.honest(e, 1, first)
        r.honest(e + 2, 2, second, version=0)
    r.run()
    assert r.cfg.conflict_mode is ConflictMode.NON_CONFLICTING
    assert isinstance(r.client_msgs(1)[0], Response)  # no read-version check in this mode
    assert r.store.version(10) == 2


def unknown_rig():
    return Rig(Config(n_e=4, conflict_mode=ConflictMode.UNKNOWN_RW))


def test_abort_timer_with_too_few_responses_requests_replacement():
    r = unknown_rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.verify(1, 1, batch, ((9,),), (RwSet(((10, 0),), ((10, 9),)),))
    r.run()
    assert r.v.replaces == 1 and r.v.k_max == 1
    assert ("replace", 1, 2, 1) in r.v.observations
    assert all(any(isinstance(m, Replace) for m in s.got) for s in r.shims)


def test_abort_timer_with_enough_disagreeing_responses_aborts():
    r = unknown_rig()
    batch = b(0, 1, 10)
    for e, val in enumerate((0, 4, 9)):
        r.verify(e, 1, batch, ((val,),), (RwSet(((10, val),), ((10, val + 1),)),))
    r.run()
    assert ("abort-path", 1, 3, 1) in r.v.observations
    assert isinstance(r.client_msgs(0)[0], Abort) and r.v.k_max == 2
    assert r.store.records == {}


def test_all_executors_answered_without_match_aborts_at_once():
    r = unknown_rig()
    batch = b(0, 1, 10)
    for e, val in enumerate((0, 4, 9, 13)):
        r.verify(e, 1, batch, ((val,),), (RwSet(((10, val),), ((10, val + 1),)),))
    r.run(until=50 * MS)  # well before the abort timer
    assert r.v.k_max == 2 and isinstance(r.client_msgs(0)[0], Abort)


def test_match_before_timer_cancels_it():
    r = unknown_rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.honest(1, 1, batch, at=100 * MS)
    r.run()
    assert r.v.replaces == 0 and r.v.k_max == 2
    assert not any(o[0] in ("replace", "abort-path") for o in r.v.observations)


def resubmit(r, cid, nonce, key, at=None):
    m = signed_txn(cid, nonce, rmw(key))
    r.sim.schedule_send(client(cid), r.v.me, m, depart=at)
    return m


def test_resubmit_of_answered_txn_resends_reply():
    r = Rig()
    batch = b(0, 1, 10)
    for e in (0, 1):
        r.honest(e, 1, batch)
    r.run()
    resubmit(r, 0, 1, 10)
    r.run()
    assert len(r.client_msgs(0)) == 2 and r.client_msgs(0)[0] == r.client_msgs(0)[1]


def test_resubmit_of_unknown_txn_raises_missing_request_once():
    r = Rig()
    resubmit(r, 0, 1, 10)
    resubmit(r, 0, 1, 10, at=10 * MS)  # inside the rate limit
    r.run()
    errs = [m for m in r.shims[0].got if isinstance(m, Error)]
    assert len(errs) == 1 and errs[0].kind is ErrorKind.MISSING_REQUEST


def test_resubmit_of_parked_txn_reports_missing_seq():
    r = Rig()
    later = b(0, 1, 10)
    for e in (0, 1):
        r.honest(e, 2, later)  # seq 1 never arrives
    r.run()
    resubmit(r, 0, 1, 10)
    r.run()
    errs = [m for m in r.shims[0].got if isinstance(m, Error)]
    assert len(errs) == 1 and errs[0].kind is ErrorKind.MISSING_SEQ and errs[0].seq == 1


def test_resubmit_of_unmatched_txn_requests_replacement():
    r = Rig()
    batch = b(0, 1, 10)
    r.honest(0, 1, batch)
    r.run()
    resubmit(r, 0, 1, 10)
    r.run()
    assert any(isinstance(m, Replace) for m in r.shims[1].got)


def test_forged_client_resubmission_ignored():
    r = Rig()
    m = sign(signed_txn(0, 1, rmw(10)).payload, client(0), Scheme.DS, caller=client(1))
    r.sim.schedule_send(client(1), r.v.me, m)
    r.run()
    assert all(s.got == [] for s in r.shims)
