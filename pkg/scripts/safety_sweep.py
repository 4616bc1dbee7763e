#!/usr/bin/env python3
"""Seeded attack sweep: every shim-node strategy x n_R x conflict mode, with a lossy network before GST.

Prints one line per failing run and a summary; exits 1 if any invariant fails.
"""

import argparse
import itertools
import sys
import time

from servbft.adversary import AttackKind
from servbft.core import Config, ConflictMode
from servbft.harness import Scenario, run_scenario
from servbft.simnet import MS, SECOND, NetworkPolicy
from servbft.workload import WorkloadSpec


def scenario(seed, kind, n_r, mode):
    f_r = (n_r - 1) // 3
    params = {AttackKind.NODE_EXCLUSION: {"dark": list(range(n_r - f_r, n_r))},
              AttackKind.EQUIVOCATION: {"group_b": list(range(n_r // 2, n_r))},
              AttackKind.LESS_EXECUTORS: {"count": 1}}.get(kind, {})
    return Scenario(
        name=f"{kind.value}-n{n_r}-{mode.value}-s{seed}", seed=seed, duration=60 * SECOND,
        config=Config(n_r=n_r, f_r=f_r, n_e=4 if mode is ConflictMode.UNKNOWN_RW else 3, conflict_mode=mode),
        network=NetworkPolicy(jitter=2 * MS, drop_prob=0.05, dup_prob=0.05, gst=1 * SECOND),
        workload=WorkloadSpec(num_clients=8, txns_per_client=8,
                              conflict_rate=0.3 if mode is not ConflictMode.NON_CONFLICTING else 0.0),
        byzantine_nodes={i: [(kind.value, params)] for i in range(f_r)}, expect_liveness=True, trace=False)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--n-r", type=int, nargs="+", default=[4, 7])
    args = ap.parse_args()
    t0 = time.monotonic()
    runs = fails = 0
    for seed, kind, n_r, mode in itertools.product(range(args.seeds), AttackKind, args.n_r, ConflictMode):
        res = run_scenario(scenario(seed, kind, n_r, mode))
        runs += 1
        if not res.passed:
            fails += 1
            print(res.scenario.name, [line for line in res.verdict_lines() if line.startswith("FAIL")])
    print(f"{runs} runs, {fails} failing, {time.monotonic() - t0:.1f}s")
    return 1 if fails else 0


if __name__ == "__main__":
    sys.exit(main())
