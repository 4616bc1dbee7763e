import csv
import io
import math
from pathlib import Path

import pytest
import yaml

from helpers import small_scenario
from servbft.cli import main
from servbft.core import Config, ConflictMode
from servbft.harness import (CSV_COLUMNS, ExecutorFaults, Mode, ScenarioError, fingerprint,
                             load_scenario, percentile, rows_to_csv, run_scenario, scenario_from_dict,
                             sweep)
from servbft.executor import ExecutorStrategy
from servbft.simnet import MS
from servbft.workload import WorkloadSpec

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def tiny_tree(**kw):
    tree = {"name": "tiny", "seed": 1, "duration_ms": 2000, "warmup_ms": 0,
            "workload": {"num_clients": 4, "txns_per_client": 5}}
    tree.update(kw)
    return tree


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    load_scenario(path).validate()


def test_yaml_fields_map_onto_scenario():
    sc = scenario_from_dict(tiny_tree(mode="PbftOnShim", config={"n_r": 7, "f_r": 2, "batch_timeout_ms": 3,
                                                                   "conflict_mode": "KnownRw"},
                                      byzantine={"nodes": {"S1": [{"strategy": "Equivocation",
                                                                     "params": {"group_b": [2]}}]}}))
    assert sc.mode is Mode.PBFT_ON_SHIM and sc.duration == 2000 * MS
    assert sc.config.batch_timeout == 3 * MS and sc.config.conflict_mode is ConflictMode.KNOWN_RW
    assert sc.byzantine_nodes == {1: [("Equivocation", {"group_b": [2]})]}


def test_validation_reports_every_problem():
    sc = scenario_from_dict(tiny_tree(config={"n_r": 3, "f_r": 1},
                                      workload={"num_clients": 4, "conflict_rate": 0.9}))
    with pytest.raises(ScenarioError) as e:
        sc.validate()
    assert len(e.value.problems) >= 2


def test_too_many_byzantine_nodes_rejected_unless_out_of_model():
    byz = {0: [("RequestIgnorance", {})], 1: [("RequestIgnorance", {})]}
    with pytest.raises(ScenarioError):
        small_scenario(byzantine_nodes=byz).validate()
    small_scenario(byzantine_nodes=byz, config=Config(out_of_model=True)).validate()


def test_conflicts_need_a_conflict_aware_mode():
    with pytest.raises(ScenarioError):
        small_scenario(workload=WorkloadSpec(num_clients=4, conflict_rate=0.2)).validate()


def test_percentile_nearest_rank():
    assert percentile([], 50) == 0.0
    assert percentile([5], 99) == 5
    assert percentile(list(range(1, 101)), 50) == 50
    assert percentile(list(range(1, 101)), 99) == 99


def test_same_seed_is_byte_identical():
    sc = lambda: small_scenario(seed=4, workload=WorkloadSpec(num_clients=6, txns_per_client=6))
    a, b = run_scenario(sc()), run_scenario(sc())
    assert fingerprint(a) == fingerprint(b)
    assert list(a.world.sim.trace.lines()) == list(b.world.sim.trace.lines())
    assert a.world.store.snapshot_bytes() == b.world.store.snapshot_bytes()


def test_cost_total_is_sum_of_identity_shares():
    res = run_scenario(small_scenario())
    m = res.metrics
    assert math.isclose(m.cost_total, sum(m.cost_by_identity.values()))
    assert m.spawns == res.world.cfg.n_e * len(res.world.verifier.done_seqs)


def test_duplicate_spawning_costs_only_the_attacker():
    wl = WorkloadSpec(num_clients=4, txns_per_client=5)
    honest = run_scenario(small_scenario(workload=wl)).metrics
    attacked = run_scenario(small_scenario(workload=wl, byzantine_nodes={
        0: [("DuplicateSpawnPrimary", {"factor": 4})]})).metrics
    assert attacked.cost_by_identity["S0"] > honest.cost_by_identity["S0"]
    for ident, share in honest.cost_by_identity.items():
        if ident != "S0":
            assert math.isclose(attacked.cost_by_identity[ident], share)


def test_sweep_rows_and_csv():
    rows = sweep(tiny_tree(), "config.batch_size", [1, 5], seeds=[0, 1])
    assert [(r["value"], r["seed"]) for r in rows] == [(1, 0), (1, 1), (5, 0), (5, 1)]
    parsed = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
    assert len(parsed) == 4 and list(parsed[0]) == CSV_COLUMNS + ["passed"]


def test_byzantine_executors_within_bound_keep_safety():
    res = run_scenario(small_scenario(executor_faults=ExecutorFaults(ExecutorStrategy.WRONG_RESULT, count=1),
                                      expect_liveness=True))
    assert res.passed, res.verdict_lines()


# -- CLI -----------------------------------------------------------------------

def write(tmp_path, tree, name="s.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(tree))
    return str(p)


def test_cli_run_writes_outputs(tmp_path, capsys):
    path = write(tmp_path, tiny_tree())
    assert main(["run", path, "--out", str(tmp_path / "out")]) == 0
    files = sorted(p.name for p in (tmp_path / "out").iterdir())
    assert files == ["tiny.metrics.json", "tiny.store.bin", "tiny.trace.txt", "tiny.verdicts.txt"]
    assert "PASS" in capsys.readouterr().out


def test_cli_check_exit_codes(tmp_path):
    assert main(["check", write(tmp_path, tiny_tree())]) == 0
    bad = write(tmp_path, tiny_tree(config={"n_r": 3, "f_r": 1}), "bad.yaml")
    assert main(["check", bad]) == 2
    assert main(["run", bad, "--out", str(tmp_path)]) == 2


def test_cli_set_override(tmp_path, capsys):
    path = write(tmp_path, tiny_tree())
    assert main(["run", path, "--out", str(tmp_path), "--set", "workload.txns_per_client=2"]) == 0
    assert '"issued": 8' in capsys.readouterr().out


def test_cli_sweep_and_oracle(tmp_path, capsys):
    path = write(tmp_path, tiny_tree())
    assert main(["sweep", path, "--axis", "config.batch_size", "--values", "2,4", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sweep-config.batch_size.csv").exists()
    assert main(["oracle", path]) == 0
    assert '"passed": true' in capsys.readouterr().out


def test_cli_reports_failed_verdict(tmp_path):
    """A run cut off after 2 ms leaves txns unanswered, so the liveness verdict fails."""
    tree = tiny_tree(expect_liveness=True, duration_ms=2)
    assert not run_scenario(scenario_from_dict(tree)).verdicts["liveness"][0]
    assert main(["run", write(tmp_path, tree), "--out", str(tmp_path)]) == 1
