#!/usr/bin/env python3
"""Throughput/latency sweeps: clients, batch size, conflict rate and the baseline comparison.

Writes one CSV per sweep into the output directory (default ./out/trends).
"""

import argparse
import csv
import logging
from pathlib import Path

from servbft.core import Config, ConflictMode
from servbft.harness import CSV_COLUMNS, Mode, Scenario, run_scenario
from servbft.simnet import SECOND
from servbft.workload import WorkloadSpec

log = logging.getLogger("trends")


def point(mode=Mode.SERVERLESS_BFT, clients=32, dur=0.5, warm=0.2, seed=0, wl=None, **cfg):
    sc = Scenario(name="trend", mode=mode, seed=seed, duration=int(dur * SECOND), warmup=int(warm * SECOND),
                  config=Config(**cfg), workload=WorkloadSpec(num_clients=clients, **(wl or {})), trace=False)
    res = run_scenario(sc)
    row = {c: getattr(res.metrics, c) for c in CSV_COLUMNS if hasattr(res.metrics, c)}
    row["passed"] = res.passed
    return row


COLUMNS = [c for c in CSV_COLUMNS if c not in ("axis", "value")] + ["passed"]


def write(path: Path, axis: str, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=[axis] + COLUMNS)
        w.writeheader()
        for val, row in rows:
            w.writerow({axis: val, **{k: row.get(k) for k in COLUMNS}})
    log.info("wrote %s", path)


def clients(out, seed):
    write(out / "clients.csv", "clients", [(c, point(clients=c, seed=seed)) for c in (8, 32, 64, 128, 256, 512)])


def batch(out, seed):
    write(out / "batch.csv", "batch_size",
          [(b, point(clients=256, batch_size=b, seed=seed)) for b in (1, 5, 10, 20, 50, 100)])


def conflicts(out, seed):
    rows = []
    for rate in (0.0, 0.1, 0.2, 0.3, 0.4, 0.5):
        for mode in (ConflictMode.KNOWN_RW, ConflictMode.UNKNOWN_RW):
            rows.append((f"{rate}:{mode.value}", point(clients=128, n_e=4, conflict_mode=mode, seed=seed,
                                                        wl={"conflict_rate": rate})))
    write(out / "conflicts.csv", "conflict_rate:mode", rows)


def baselines(out, seed):
    rows = []
    for f_r in (1, 4, 10):
        for mode in Mode:
            rows.append((f"{3 * f_r + 1}:{mode.value}",
                         point(mode=mode, clients=256, dur=0.35, warm=0.15, n_r=3 * f_r + 1, f_r=f_r, seed=seed)))
    write(out / "baselines.csv", "n_r:mode", rows)


SWEEPS = {"clients": clients, "batch": batch, "conflicts": conflicts, "baselines": baselines}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("sweeps", nargs="*", help=f"any of {', '.join(SWEEPS)} (default: all)")
    ap.add_argument("--out", default="out/trends")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    unknown = set(args.sweeps) - set(SWEEPS)
    if unknown:
        ap.error(f"unknown sweep(s): {', '.join(sorted(unknown))}")
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.sweeps or SWEEPS:
        SWEEPS[name](out, args.seed)


if __name__ == "__main__":
    main()
