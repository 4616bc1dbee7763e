from itertools import combinations

from hypothesis import given, settings, strategies as st

from helpers import make_batch, make_cert, rmw, signed_txn, small_scenario
from servbft.core import (NOOP, Checkpoint, Config, Preprepare, Prepare, PreparedProof, Scheme, ViewChange,
                          digest_of, shim, sign)
from servbft.harness import run_scenario
from servbft.shim import ShimNode, compute_assignments, state_digest, valid_proof, valid_view_change
from servbft.workload import WorkloadSpec


def proof(cfg, view, seq, batch, preparers=None):
    """A prepared proof: the view's primary proposes, 2f other nodes prepare."""
    primary = cfg.primary_of(view)
    d = digest_of(batch)
    pp = sign(Preprepare(view, seq, d, batch), shim(primary), Scheme.DS)
    others = preparers if preparers is not None else [i for i in range(cfg.n_r) if i != primary][:2 * cfg.f_r]
    prepares = tuple(sign(Prepare(view, seq, d), shim(i), Scheme.DS) for i in others)
    return PreparedProof(pp, prepares)


def test_proof_needs_2f_prepares_from_non_primaries(cfg):
    b = make_batch(signed_txn(0, 1, rmw(1)))
    assert valid_proof(proof(cfg, 0, 1, b), cfg)
    assert not valid_proof(proof(cfg, 0, 1, b, preparers=[1]), cfg)
    assert not valid_proof(proof(cfg, 0, 1, b, preparers=[0, 1]), cfg)  # primary's own prepare
    assert not valid_proof(proof(cfg, 0, 1, b, preparers=[1, 1]), cfg)


def test_proof_rejects_preprepare_from_non_primary(cfg):
    b = make_batch(signed_txn(0, 1, rmw(1)))
    good = proof(cfg, 0, 1, b)
    pp = sign(good.preprepare.payload, shim(2), Scheme.DS)
    assert not valid_proof(PreparedProof(pp, good.prepares), cfg)


def test_view_change_vote_validation(cfg):
    b = make_batch(signed_txn(0, 1, rmw(1)))
    vc = ViewChange(1, 0, (), (proof(cfg, 0, 1, b),))
    assert valid_view_change(sign(vc, shim(2), Scheme.DS), cfg)
    assert not valid_view_change(sign(vc, shim(2), Scheme.MAC), cfg)
    stale = ViewChange(0, 0, (), (proof(cfg, 0, 1, b),))  # proof not below the target view
    assert not valid_view_change(sign(stale, shim(2), Scheme.DS), cfg)
    weak = ViewChange(1, 0, (), (proof(cfg, 0, 1, b, preparers=[1]),))
    assert not valid_view_change(sign(weak, shim(2), Scheme.DS), cfg)


def test_assignments_fill_gaps_with_noops(cfg):
    b1 = make_batch(signed_txn(0, 1, rmw(1)))
    b3 = make_batch(signed_txn(0, 3, rmw(3)))
    votes = [ViewChange(1, 0, (), (proof(cfg, 0, 1, b1), proof(cfg, 0, 3, b3))), ViewChange(1, 0, (), ())]
    assert compute_assignments(votes) == (0, [(1, b1), (2, NOOP), (3, b3)])


def test_assignments_skip_seqs_below_stable(cfg):
    b = make_batch(signed_txn(0, 1, rmw(1)))
    votes = [ViewChange(1, 5, (), ()), ViewChange(1, 0, (), (proof(cfg, 0, 3, b),))]
    assert compute_assignments(votes) == (5, [])


@settings(max_examples=40, deadline=None)
@given(st.sampled_from([1, 2]), st.data())
def test_prepared_batch_survives_every_quorum_of_votes(f, data):
    """If f+1 honest nodes hold a prepared proof for T at view v, every set of
    2f+1 view-change votes re-assigns T, whatever older proofs other voters hold."""
    cfg = Config(n_r=3 * f + 1, f_r=f)
    t = make_batch(signed_txn(0, 1, rmw(1)))
    older = make_batch(signed_txn(1, 1, rmw(2)))
    holders = data.draw(st.sets(st.integers(0, cfg.n_r - 1), min_size=f + 1, max_size=cfg.n_r))
    new_view = 3
    votes = []
    for i in range(cfg.n_r):
        if i in holders:
            proofs = (proof(cfg, 2, 1, t),)
        else:  # no proof, or a proof for another batch from an earlier view
            proofs = data.draw(st.sampled_from([(), (proof(cfg, 0, 1, older),), (proof(cfg, 1, 1, older),)]))
        vc = ViewChange(new_view, 0, (), proofs)
        assert valid_view_change(sign(vc, shim(i), Scheme.DS), cfg)
        votes.append(vc)
    for subset in combinations(range(cfg.n_r), cfg.quorum):
        _, assigned = compute_assignments(votes[i] for i in subset)
        assert assigned[0] == (1, t)


def test_divergent_recommit_is_counted_not_applied(cfg):
    node = ShimNode(shim(1), cfg)
    a = make_batch(signed_txn(0, 1, rmw(1)))
    b = make_batch(signed_txn(0, 2, rmw(1)))
    node._mark_committed(1, digest_of(a), a, make_cert(cfg, 1, a), 0)
    node._mark_committed(1, digest_of(b), b, make_cert(cfg, 1, b), 0)
    assert node.divergences == 1 and node.committed[1].digest == digest_of(a)


def test_node_adopts_valid_checkpoint_bundle(cfg):
    node = ShimNode(shim(3), cfg)
    batches = [make_batch(signed_txn(0, s, rmw(s))) for s in range(1, 11)]
    certs = tuple(make_cert(cfg, s, b) for s, b in enumerate(batches, 1))
    cp = Checkpoint(0, 10, state_digest((c.seq, c.digest) for c in certs), certs)
    sent = []
    node._broadcast = sent.append
    for i in range(3):
        node.on_checkpoint(sign(cp, shim(i), Scheme.DS))
    assert sorted(node.committed) == list(range(1, 11))
    assert node.stable_seq == 10
    # a bundle whose state digest lies is refused
    other = ShimNode(shim(3), cfg)
    other._broadcast = sent.append
    bad = Checkpoint(0, 10, digest_of(NOOP), certs)
    other.on_checkpoint(sign(bad, shim(0), Scheme.DS))
    assert other.committed == {}


def run(**kw):
    res = run_scenario(small_scenario(**kw))
    assert res.passed, res.verdict_lines()
    return res


def agreed_prefix(world):
    nodes = world.honest_nodes()
    common = set.intersection(*(set(n.committed) for n in nodes))
    for s in common:
        assert len({n.committed[s].digest for n in nodes}) == 1
    return common


def test_honest_run_commits_everything_everywhere():
    res = run(workload=WorkloadSpec(num_clients=6, txns_per_client=10), expect_liveness=True)
    w = res.world
    assert res.metrics.committed == 60 and res.metrics.view_changes == 0
    assert agreed_prefix(w) == set(w.nodes[0].committed)


def test_equivocating_primary_cannot_split_honest_nodes():
    res = run(byzantine_nodes={0: [("Equivocation", {"group_b": [2, 3]})]},
              workload=WorkloadSpec(num_clients=6, txns_per_client=6), expect_liveness=True)
    agreed_prefix(res.world)


def test_dark_node_catches_up_through_checkpoints():
    res = run(byzantine_nodes={0: [("NodeExclusion", {"dark": [3]})]},
              workload=WorkloadSpec(num_clients=8, txns_per_client=10), expect_liveness=True)
    w = res.world
    dark = w.nodes[3]
    assert res.metrics.view_changes == 0
    assert dark.stable_seq > 0 and dark.stable_seq == w.nodes[1].stable_seq
    assert all(s in dark.committed for s in range(1, dark.stable_seq + 1))
