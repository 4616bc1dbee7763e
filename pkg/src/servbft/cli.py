"""Command-line entry point: ``servbft run|sweep|check|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import harness


def _overrides(pairs: list[str]) -> dict:
    out = {}
    for p in pairs or []:
        key, _, raw = p.partition("=")
        out[key] = yaml.safe_load(raw)
    return out


def _out_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("SBFT_OUT", "out"))


def cmd_run(args) -> int:
    res = harness.run_scenario(args.scenario, _overrides(args.set))
    paths = harness.write_outputs(res, _out_dir(args.out))
    print(res.metrics.to_json())
    for line in res.verdict_lines():
        print(line)
    print(f"outputs in {paths['metrics'].parent}")
    return 0 if res.passed else 1


def cmd_sweep(args) -> int:
    values = [yaml.safe_load(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    rows = harness.sweep(args.scenario, args.axis, values, seeds)
    text = harness.rows_to_csv(rows)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep-{args.axis}.csv"
    path.write_text(text)
    sys.stdout.write(text)
    return 0 if all(r["passed"] for r in rows) else 1


def cmd_check(args) -> int:
    try:
        sc = harness.load_scenario(args.scenario, _overrides(args.set))
        sc.validate()
    except harness.ScenarioError as e:
        for p in e.problems:
            print(f"error: {p}")
        return 2
    print(f"{args.scenario}: ok")
    return 0


def cmd_oracle(args) -> int:
    res = harness.run_scenario(args.scenario, _overrides(args.set))
    verdict = harness.run_oracle(res.world)
    print(json.dumps({"passed": verdict.passed, "checked": verdict.checked,
                      "counterexample": verdict.counterexample}))
    return 0 if verdict.passed else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="servbft", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, out=True):
        p.add_argument("scenario", help="scenario YAML file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scenario field, e.g. workload.num_clients=8")
        if out:
            p.add_argument("--out", help="output directory (default $SBFT_OUT or ./out)")

    p = sub.add_parser("run", help="run one scenario and check every invariant")
    common(p)
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("sweep", help="vary one field and write a CSV")
    common(p)
    p.add_argument("--axis", required=True, help="dotted field, e.g. config.batch_size")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.set_defaults(fn=cmd_sweep)
    p = sub.add_parser("check", help="validate a scenario without running it")
    common(p, out=False)
    p.set_defaults(fn=cmd_check)
    p = sub.add_parser("oracle", help="run a scenario and report only the serializability verdict")
    common(p, out=False)
    p.set_defaults(fn=cmd_oracle)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except harness.ScenarioError as e:
        print(e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
