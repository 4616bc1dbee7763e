"""Acceptance criteria, one test each, at their stated tolerances.

Every test prints a single ``PASS``/``FAIL`` line (also collected into the
pytest terminal summary) before asserting.
"""

import dataclasses
import itertools
import time

import pytest

from conftest import ACCEPTANCE_LINES
from servbft.adversary import AttackKind
from servbft.core import Config, ConflictMode, Read, Write, encode
from servbft.executor import ExecutorStrategy as ES
from servbft.harness import (ExecutorFaults, Mode, Scenario, fingerprint, run_oracle, run_scenario)
from servbft.simnet import MS, SECOND, NetworkPolicy
from servbft.workload import WorkloadSpec


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {title} -- {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def executors_for(mode):
    """n_E per conflict mode: 2f_E+1 without unknown read-write sets, 3f_E+1 with them."""
    return 4 if mode is ConflictMode.UNKNOWN_RW else 3


def attack_params(kind, n_r, f_r):
    return {
        AttackKind.NODE_EXCLUSION: {"dark": list(range(n_r - f_r, n_r))},
        AttackKind.EQUIVOCATION: {"group_b": list(range(n_r // 2, n_r))},
        AttackKind.LESS_EXECUTORS: {"count": 1},
    }.get(kind, {})


def safety_scenario(seed, kind, n_r, mode):
    f_r = (n_r - 1) // 3
    return Scenario(
        name=f"safety-{kind.value}-{n_r}-{mode.value}-{seed}", seed=seed, duration=60 * SECOND,
        config=Config(n_r=n_r, f_r=f_r, n_e=executors_for(mode), conflict_mode=mode),
        network=NetworkPolicy(jitter=2 * MS, drop_prob=0.05, dup_prob=0.05, gst=1 * SECOND),
        workload=WorkloadSpec(num_clients=8, txns_per_client=8,
                              conflict_rate=0.3 if mode is not ConflictMode.NON_CONFLICTING else 0.0),
        byzantine_nodes={i: [(kind.value, attack_params(kind, n_r, f_r))] for i in range(f_r)},
        expect_liveness=True, trace=False)


SAFETY_INVARIANTS = ("shim_consistency", "shim_non_divergence", "verifier_non_divergence",
                     "write_exclusivity", "forgery_impossibility")
SAFETY_GRID = list(itertools.product(range(5), list(AttackKind), (4, 7), list(ConflictMode)))


@pytest.fixture(scope="module")
def safety_runs():
    t0 = time.monotonic()
    runs = [run_scenario(safety_scenario(*args)) for args in SAFETY_GRID]
    return runs, time.monotonic() - t0


def test_criterion_1_safety_under_attack(safety_runs):
    runs, elapsed = safety_runs
    kinds = {r.scenario.byzantine_nodes[0][0][0] for r in runs}
    bad = [(r.scenario.name, k) for r in runs for k in SAFETY_INVARIANTS if not r.verdicts[k][0]]
    ok = len(runs) >= 200 and kinds == {k.value for k in AttackKind} and not bad and elapsed < 300
    report(1, "safety", ok, f"{len(runs)} runs, {len(kinds)} strategies, n_R in {{4,7}}, "
                            f"{len(bad)} violations, {elapsed:.1f}s")


def liveness_scenario(kind, n_r, seed=0):
    f_r = (n_r - 1) // 3
    return Scenario(
        name=f"live-{kind}-{n_r}", seed=seed, duration=60 * SECOND, warmup=0,
        config=Config(n_r=n_r, f_r=f_r),
        network=NetworkPolicy(jitter=2 * MS, drop_prob=0.05, gst=1 * SECOND),
        workload=WorkloadSpec(num_clients=4, txns_per_client=5),
        byzantine_nodes={i: [(kind, {"count": 1} if kind == "LessExecutors" else {})] for i in range(f_r)},
        expect_liveness=True, trace=False)


def test_criterion_2_liveness_and_view_change_bound(safety_runs):
    runs, _ = safety_runs
    unlive = [r.scenario.name for r in runs if not r.verdicts["liveness"][0]]
    details, slow = [], []
    for kind in ("RequestIgnorance", "UnsuccessfulConsensus", "LessExecutors"):
        for n_r in (4, 7):
            r = run_scenario(liveness_scenario(kind, n_r))
            f_r = r.world.cfg.f_r
            attempts = max(max(n.views_installed) for n in r.world.honest_nodes())
            details.append(f"{kind}@{n_r}:{attempts}")
            if not r.verdicts["liveness"][0] or attempts == 0 or attempts > f_r + 1:
                slow.append(r.scenario.name)
    ok = not unlive and not slow
    report(2, "liveness", ok, f"{len(runs) - len(unlive)}/{len(runs)} attack runs fully answered; "
                              f"views reached {' '.join(details)}")


def test_criterion_3_oracle(safety_runs):
    runs, _ = safety_runs
    failing = [r.scenario.name for r in runs if not r.verdicts["serializability"][0]]
    w = runs[0].world
    key = next(iter(w.store.records))
    val, ver = w.store.records[key]
    w.store.records[key] = ((val or 0) + 1, ver)  # corrupt one applied write
    corrupted = run_oracle(w)
    w.store.records[key] = (val, ver)
    ok = not failing and not corrupted.passed
    report(3, "serializability oracle", ok, f"{len(runs) - len(failing)}/{len(runs)} runs pass; "
                                            f"corrupted fixture -> {corrupted.counterexample!r}")


@pytest.mark.parametrize("n_r,dark", [(4, [3]), (7, [5, 6]), (7, [1, 2])])
def test_criterion_4_dark_nodes(n_r, dark):
    f_r = (n_r - 1) // 3
    sc = Scenario(name="dark", duration=3 * SECOND, config=Config(n_r=n_r, f_r=f_r),
                  workload=WorkloadSpec(num_clients=16, txns_per_client=30),
                  byzantine_nodes={0: [("NodeExclusion", {"dark": dark})]}, expect_liveness=True)
    r = run_scenario(sc)
    honest = r.world.honest_nodes()
    stable = min(n.stable_seq for n in honest)
    states = {tuple((s, n.committed[s].digest) for s in range(1, stable + 1) if s in n.committed) for n in honest}
    equal = len(states) == 1 and len(next(iter(states))) == stable
    ok = len(dark) == f_r and r.passed and r.metrics.view_changes == 0 and stable > 0 and equal
    report(4, f"dark nodes n_R={n_r} dark={dark}", ok,
           f"view changes {r.metrics.view_changes}, checkpointed prefix {stable} seqs equal on "
           f"{len(honest)} honest nodes: {equal}")


RMW = (Read(0), Write(0, 1, src=0))


def indistinguishable_pair(seed):
    """Honest executors whose spawn links are slow vs. a primary delaying spawns by the same amounts."""
    cfg = Config(n_e=3, conflict_mode=ConflictMode.UNKNOWN_RW, out_of_model=True)
    wl = WorkloadSpec(num_clients=32, txns_per_client=20, conflict_rate=0.5)
    regions = ("c0", "c1", "c2")
    delays = (5 * MS, 20 * MS, 35 * MS)
    slow_links = {("edge", r): 1 * MS + d for r, d in zip(regions, delays)}
    honest = Scenario(name="honest", seed=seed, duration=30 * SECOND, config=cfg, workload=wl,
                      executor_regions=regions, network=NetworkPolicy(latency=slow_links))
    byz = Scenario(name="byz", seed=seed, duration=30 * SECOND, config=cfg, workload=wl, executor_regions=regions,
                   byzantine_nodes={0: [("ByzantineAbortDelay",
                                         {"delay": delays[0], "stagger": delays[1] - delays[0]})]})
    return run_scenario(honest), run_scenario(byz)


def branch_run(pattern, byz=None, regions=("fast",), lat=None, script=None):
    sc = Scenario(name="branch", duration=20 * SECOND, warmup=0,
                  config=Config(n_e=4, conflict_mode=ConflictMode.UNKNOWN_RW, batch_size=1),
                  network=NetworkPolicy(latency=lat or {}), workload=WorkloadSpec(num_clients=2),
                  executor_faults=ExecutorFaults(pattern=pattern), executor_regions=regions,
                  storage_region="store", script=script or {0: [(0, RMW)]}, byzantine_nodes=byz or {},
                  expect_liveness=True)
    r = run_scenario(sc)
    return r, {o[0] for o in r.world.verifier.observations}


def test_criterion_5_indistinguishability_and_abort_branches():
    same, aborts = [], []
    for seed in range(3):
        a, b = indistinguishable_pair(seed)
        same.append(a.passed and b.passed
                    and encode(a.world.verifier.observations) == encode(b.world.verifier.observations))
        aborts.append(a.metrics.aborted)
    normal, kinds_n = branch_run((ES.HONEST,) * 4)
    replace, kinds_r = branch_run((ES.HONEST, ES.WRONG_RESULT), byz={0: [("LessExecutors", {"count": 2})]})
    abort, kinds_a = branch_run((ES.HONEST, ES.WRONG_RESULT, ES.HONEST, ES.HONEST),
                                regions=("fast", "fast", "slow", "vslow"),
                                lat={("slow", "store"): 30 * MS, ("vslow", "store"): 400 * MS},
                                script={0: [(0, RMW)], 1: [(40 * MS, RMW)]})
    aborted_client = any(o.kind == "abort" for o in abort.world.clients[1].outcomes.values())
    branches = ("match" in kinds_n and "replace" in kinds_r and "abort-path" in kinds_a and aborted_client
                and normal.passed and replace.passed and abort.passed)
    ok = all(same) and min(aborts) > 0 and branches
    report(5, "indistinguishability", ok,
           f"n_E=2f_E+1 observation traces identical for seeds 0-2: {same} ({aborts} aborts); "
           f"n_E=3f_E+1 branches normal/replace/abort exercised: {branches}")


@pytest.mark.parametrize("refusers", ["last", "first"])
def test_criterion_6_decentralized_spawn_grid(refusers):
    short = []
    for n_e, f_r in itertools.product((3, 5, 7, 11, 15, 21), (1, 2)):
        n_r, f_e = 3 * f_r + 1, (n_e - 1) // 2
        ids = range(n_r - f_r, n_r) if refusers == "last" else range(f_r)
        sc = Scenario(name="grid", duration=30 * SECOND, warmup=0,
                      config=Config(n_r=n_r, f_r=f_r, n_e=n_e, f_e=f_e, decentralized_spawning=True),
                      workload=WorkloadSpec(num_clients=4, txns_per_client=3),
                      byzantine_nodes={i: [("LessExecutors", {"count": 0})] for i in ids},
                      executor_faults=ExecutorFaults(ES.WRONG_RESULT, count=f_e),
                      expect_liveness=True, trace=False)
        r = run_scenario(sc)
        per_seq = [sum(h for _, h in v) for s, v in r.world.spawned_for.items() if s > 0]
        if not r.passed or not per_seq or min(per_seq) < f_e + 1:
            short.append((n_e, f_r, min(per_seq, default=0)))
    report(6, f"spawn grid ({refusers} f_R nodes refuse)", not short,
           f"12 cells, cells short of f_E+1 honest executors: {short}")


def load(mode=Mode.SERVERLESS_BFT, clients=32, dur=0.5, warm=0.2, wl=None, **cfg):
    sc = Scenario(name="load", mode=mode, duration=int(dur * SECOND), warmup=int(warm * SECOND),
                  config=Config(**cfg), workload=WorkloadSpec(num_clients=clients, **(wl or {})), trace=False)
    r = run_scenario(sc)
    assert r.passed, r.verdict_lines()
    return r.metrics


def test_criterion_7a_client_sweep_saturates():
    tput = [load(clients=c).throughput for c in (32, 128, 256, 512)]
    growth = all(a < b for a, b in zip(tput[:-2], tput[1:-1]))
    flat = abs(tput[-1] - tput[-2]) <= 0.10 * tput[-2]
    report("7a", "client sweep saturates", growth and flat, f"txn/s at 32/128/256/512 clients: {tput}")


def test_criterion_7b_conflicts_cut_throughput_not_latency():
    base = load(clients=128, n_e=4, conflict_mode=ConflictMode.UNKNOWN_RW)
    hot = load(clients=128, n_e=4, conflict_mode=ConflictMode.UNKNOWN_RW, wl={"conflict_rate": 0.5})
    drop = 1 - hot.throughput / base.throughput
    p50 = abs(hot.latency_p50_ms - base.latency_p50_ms) / base.latency_p50_ms
    report("7b", "conflict sweep", drop >= 0.25 and p50 <= 0.10,
           f"throughput {base.throughput} -> {hot.throughput} (drop {drop:.1%}), "
           f"p50 {base.latency_p50_ms} -> {hot.latency_p50_ms} ms ({p50:.1%})")


def test_criterion_7c_batch_size_has_interior_maximum():
    sizes = (1, 5, 10, 20, 50, 100)
    tput = [load(clients=256, batch_size=b).throughput for b in sizes]
    best = max(range(len(sizes)), key=tput.__getitem__)
    report("7c", "batch sweep", 0 < best < len(sizes) - 1,
           f"txn/s at batch {list(sizes)}: {tput}, peak at {sizes[best]}")


def test_criterion_7d_baseline_ordering():
    tput = {m: load(mode=m, clients=256, dur=0.35, warm=0.15, n_r=32, f_r=10).throughput
            for m in (Mode.NO_SHIM, Mode.SERVERLESS_CFT, Mode.PBFT_ON_SHIM, Mode.SERVERLESS_BFT)}
    t = [tput[m] for m in (Mode.NO_SHIM, Mode.SERVERLESS_CFT, Mode.PBFT_ON_SHIM, Mode.SERVERLESS_BFT)]
    ok = t[0] > t[1] > t[2] >= t[3]
    report("7d", "baselines at n_R=32", ok, ", ".join(f"{m.value} {v}" for m, v in tput.items()))


def test_criterion_8_known_rw_avoids_aborts():
    known = load(clients=128, dur=0.6, warm=0.1, n_e=4, conflict_mode=ConflictMode.KNOWN_RW,
                 wl={"conflict_rate": 0.5})
    unknown = load(clients=128, dur=0.6, warm=0.1, n_e=4, conflict_mode=ConflictMode.UNKNOWN_RW,
                   wl={"conflict_rate": 0.5})
    ok = known.aborted == 0 and unknown.abort_rate > 0
    report(8, "KnownRw vs UnknownRw at 50% conflicts", ok,
           f"KnownRw aborts {known.aborted}, UnknownRw abort rate {unknown.abort_rate}")


def test_criterion_9_determinism():
    def sc():
        s = safety_scenario(3, AttackKind.EQUIVOCATION, 7, ConflictMode.UNKNOWN_RW)
        return dataclasses.replace(s, trace=True)
    a, b = run_scenario(sc()), run_scenario(sc())
    same = (list(a.world.sim.trace.lines()) == list(b.world.sim.trace.lines())
            and a.metrics.to_json() == b.metrics.to_json() and a.verdicts_json() == b.verdicts_json()
            and a.world.store.snapshot_bytes() == b.world.store.snapshot_bytes()
            and fingerprint(a) == fingerprint(b))
    report(9, "determinism", same, f"trace, metrics, verdicts and store identical across reruns "
                                   f"(fingerprint {fingerprint(a)[:16]})")
