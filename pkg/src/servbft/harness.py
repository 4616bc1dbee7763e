"""Scenario files, run orchestration, invariant monitors and metrics.

A scenario is a YAML tree (see ``scenarios/`` for examples). Durations in the
file are milliseconds (keys ending in ``_ms``); everything inside the
simulator runs in microseconds.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import enum
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from . import adversary
from .baselines import CftNode, NoShimNode, PbftClient, PbftReplica
from .core import (MESSAGE_SIZE, VERIFIER, Config, ConfigError, ConflictMode, CostRates, Execute,
                   Identity, MessageKind, Role, SignedMessage, encode, shim)
from .executor import Executor, ExecutorBehavior, ExecutorStrategy
from .oracle import OracleVerdict, StoreImage, audit_log, serializability_oracle
from .shim import ShimNode
from .simnet import MS, SECOND, NetworkPolicy, Partition, Simulator, TimingModel, stream_rng
from .storage import StorageNode, StorageViolation, VersionedStore
from .verifier import Verifier
from .workload import Client, Mix, WorkloadSpec

log = logging.getLogger(__name__)


class Mode(enum.Enum):
    SERVERLESS_BFT = "ServerlessBFT"
    NO_SHIM = "NoShim"
    SERVERLESS_CFT = "ServerlessCFT"
    PBFT_ON_SHIM = "PbftOnShim"


class ScenarioError(ValueError):
    """Scenario failed validation; ``problems`` lists every violated constraint."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid scenario:\n  - " + "\n  - ".join(problems))
        self.problems = problems


@dataclass
class ExecutorFaults:
    strategy: ExecutorStrategy = ExecutorStrategy.HONEST
    count: int = 0  # byzantine executors among those spawned for each seq
    copies: int = 100
    pattern: tuple = ()  # optional strategy per spawn index within a seq; overrides the above

    def behavior_for(self, index: int) -> ExecutorBehavior:
        if self.pattern:
            strategy = self.pattern[index] if index < len(self.pattern) else ExecutorStrategy.HONEST
            return ExecutorBehavior(strategy, self.copies)
        if self.strategy is not ExecutorStrategy.HONEST and index < self.count:
            return ExecutorBehavior(self.strategy, self.copies)
        return ExecutorBehavior()

    @property
    def per_seq(self) -> int:
        if self.pattern:
            return sum(s is not ExecutorStrategy.HONEST for s in self.pattern)
        return self.count if self.strategy is not ExecutorStrategy.HONEST else 0


@dataclass
class Scenario:
    name: str = "scenario"
    mode: Mode = Mode.SERVERLESS_BFT
    seed: int = 0
    duration: int = 2 * SECOND
    warmup: int = 200 * MS
    drain: int = 0  # extra time after ``duration`` in which no new txns are issued
    config: Config = field(default_factory=Config)
    network: NetworkPolicy = field(default_factory=NetworkPolicy)
    timing: TimingModel = field(default_factory=TimingModel)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    byzantine_nodes: dict = field(default_factory=dict)  # node id -> [(name, params)]
    executor_faults: ExecutorFaults = field(default_factory=ExecutorFaults)
    executor_regions: tuple = ("cloud",)  # by spawn index within a seq, round-robin
    storage_region: str = "onprem"
    script: dict = field(default_factory=dict)  # client id -> [(at_us, ops)]
    expect_liveness: bool = False
    trace: bool = True
    audit_signatures: bool = True

    def validate(self) -> None:
        problems: list[str] = []
        try:
            self.config.validate()
        except ConfigError as e:
            problems.append(f"config: {e}")
        cfg = self.config
        if len(self.byzantine_nodes) > cfg.f_r and not cfg.out_of_model:
            problems.append(f"{len(self.byzantine_nodes)} byzantine shim nodes exceed f_R={cfg.f_r} "
                            "(set config.out_of_model to run anyway)")
        for nid, strategies in self.byzantine_nodes.items():
            if not 0 <= nid < cfg.n_r:
                problems.append(f"byzantine node {nid} outside 0..{cfg.n_r - 1}")
            for name, params in strategies:
                try:
                    strat = adversary.build_strategy(name, params)
                except (ValueError, KeyError, TypeError) as e:
                    problems.append(f"node {nid}: {e}")
                    continue
                if isinstance(strat, adversary.NodeExclusion) and len(strat.dark) > cfg.f_r \
                        and not cfg.out_of_model:
                    problems.append(f"NodeExclusion dark set of {len(strat.dark)} exceeds f_R")
        ef = self.executor_faults
        if ef.per_seq > cfg.f_e and not cfg.out_of_model:
            problems.append(f"{ef.per_seq} byzantine executors per request exceed f_E={cfg.f_e}")
        problems += self.workload.validate()
        if cfg.conflict_mode is ConflictMode.NON_CONFLICTING and self.workload.conflict_rate > 0 \
                and not cfg.out_of_model:
            problems.append("NonConflicting mode cannot run a workload with conflict_rate > 0")
        if self.warmup >= self.duration:
            problems.append("warmup must be shorter than duration")
        for cid in self.script:
            if not 0 <= cid < self.workload.num_clients:
                problems.append(f"script names client {cid} outside the client population")
        if problems:
            raise ScenarioError(problems)


# ---------------------------------------------------------------------------
# loading

def _ms(v: Any) -> int:
    return int(round(float(v) * MS))


_CFG_MS = {"client_timer", "node_timer", "retransmit_timer", "verifier_abort_timer",
           "view_change_timer", "batch_timeout"}


def _config_from(d: dict) -> Config:
    kw: dict[str, Any] = {}
    for k, v in d.items():
        if k.endswith("_ms") and k[:-3] in _CFG_MS:
            kw[k[:-3]] = _ms(v)
        elif k == "conflict_mode":
            kw[k] = ConflictMode(v)
        elif k == "cost":
            kw[k] = CostRates(**v)
        elif k in {f.name for f in dataclasses.fields(Config)}:
            kw[k] = v
        else:
            raise ScenarioError([f"config: unknown field {k!r}"])
    return Config(**kw)


def _network_from(d: dict) -> NetworkPolicy:
    kw: dict[str, Any] = {}
    for k, v in d.items():
        if k == "default_latency_ms":
            kw["default_latency"] = _ms(v)
        elif k == "jitter_ms":
            kw["jitter"] = _ms(v)
        elif k == "gst_ms":
            kw["gst"] = _ms(v)
        elif k in ("drop_prob", "dup_prob"):
            kw[k] = float(v)
        elif k == "latency":
            kw["latency"] = {(e["a"], e["b"]): _ms(e["ms"]) for e in v}
        elif k == "partitions":
            kw["partitions"] = [Partition(_ms(p["start_ms"]), _ms(p["end_ms"]),
                                          frozenset(_identity(x) for x in p["a"]),
                                          frozenset(_identity(x) for x in p["b"])) for p in v]
        else:
            raise ScenarioError([f"network: unknown field {k!r}"])
    return NetworkPolicy(**kw)


def _identity(s: str) -> Identity:
    roles = {"S": Role.SHIM, "C": Role.CLIENT, "E": Role.EXECUTOR, "V": Role.VERIFIER, "T": Role.STORAGE}
    return Identity(roles[s[0]], int(s[1:]))


def _node_id(key: Any) -> int:
    """Shim node key: ``3`` or ``"S3"``."""
    if isinstance(key, str) and key[:1] == "S":
        return _identity(key).id
    return int(key)


def _workload_from(d: dict) -> WorkloadSpec:
    kw: dict[str, Any] = {}
    for k, v in d.items():
        if k == "mix":
            kw[k] = Mix(v)
        elif k == "compute_cost_ms":
            kw["compute_cost"] = (_ms(v[0]), _ms(v[1])) if isinstance(v, (list, tuple)) else (_ms(v), _ms(v))
        elif k in ("think_time_ms", "open_loop_interval_ms", "start_spread_ms"):
            kw[k[:-3]] = _ms(v)
        elif k in {f.name for f in dataclasses.fields(WorkloadSpec)}:
            kw[k] = v
        else:
            raise ScenarioError([f"workload: unknown field {k!r}"])
    return WorkloadSpec(**kw)


def _op_from(spec: list):
    from .core import Compute, Read, Write
    kind = spec[0]
    if kind == "read":
        return Read(int(spec[1]))
    if kind == "write":
        src = int(spec[3]) if len(spec) > 3 and spec[3] is not None else None
        return Write(int(spec[1]), int(spec[2]), src)
    if kind == "compute":
        return Compute(_ms(spec[1]))
    raise ScenarioError([f"script: unknown op {kind!r}"])


def scenario_from_dict(d: dict) -> Scenario:
    d = copy.deepcopy(d)
    sc = Scenario()
    for k, v in d.items():
        if k == "name":
            sc.name = str(v)
        elif k == "mode":
            sc.mode = Mode(v)
        elif k == "seed":
            sc.seed = int(v)
        elif k in ("duration_ms", "warmup_ms", "drain_ms"):
            setattr(sc, k[:-3], _ms(v))
        elif k == "config":
            sc.config = _config_from(v)
        elif k == "network":
            sc.network = _network_from(v)
        elif k == "timing":
            sc.timing = TimingModel(**v)
        elif k == "workload":
            sc.workload = _workload_from(v)
        elif k == "byzantine":
            for nid, strategies in (v.get("nodes") or {}).items():
                sc.byzantine_nodes[_node_id(nid)] = [(s["strategy"], s.get("params") or {}) for s in strategies]
            ex = v.get("executors")
            if ex:
                sc.executor_faults = ExecutorFaults(
                    ExecutorStrategy(ex.get("strategy", "Honest")), int(ex.get("count", 1)),
                    int(ex.get("copies", 100)), tuple(ExecutorStrategy(x) for x in ex.get("pattern", ())))
        elif k == "executor_regions":
            sc.executor_regions = tuple(v)
        elif k == "storage_region":
            sc.storage_region = str(v)
        elif k == "script":
            for e in v:
                sc.script.setdefault(int(e["client"]), []).append((_ms(e["at_ms"]),
                                                                   tuple(_op_from(o) for o in e["ops"])))
        elif k in ("expect_liveness", "trace", "audit_signatures"):
            setattr(sc, k, bool(v))
        else:
            raise ScenarioError([f"unknown top-level field {k!r}"])
    return sc


def load_scenario(path: str | Path, overrides: Optional[dict] = None) -> Scenario:
    """Read a YAML scenario; ``overrides`` are dotted keys, e.g. {"workload.num_clients": 8}."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    for key, val in (overrides or {}).items():
        set_dotted(raw, key, val)
    sc = scenario_from_dict(raw)
    env_seed = os.environ.get("SBFT_SEED")
    if env_seed is not None:
        sc.seed = int(env_seed)
    return sc


def set_dotted(tree: dict, key: str, val: Any) -> None:
    parts = key.split(".")
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = val


# ---------------------------------------------------------------------------
# metrics

@dataclass
class MetricsReport:
    scenario: str
    mode: str
    seed: int
    issued: int
    committed: int
    aborted: int
    throughput: float  # successful txns per simulated second, after warmup
    latency_p50_ms: float
    latency_p99_ms: float
    abort_rate: float
    view: int
    view_changes: int
    spawns: int
    cost_cents_per_ktxn: float
    cost_total: float  # dollars; equals the sum of cost_by_identity
    cost_by_identity: dict
    messages: dict
    bytes: dict
    total_bytes: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


CSV_COLUMNS = ["scenario", "mode", "seed", "axis", "value", "issued", "committed", "aborted",
               "throughput", "latency_p50_ms", "latency_p99_ms", "abort_rate", "view",
               "view_changes", "spawns", "cost_cents_per_ktxn", "total_bytes"]


def percentile(values: list, q: float) -> float:
    """Nearest-rank percentile."""
    if not values:
        return 0.0
    s = sorted(values)
    k = max(0, min(len(s) - 1, int(-(-q * len(s) // 100)) - 1))
    return float(s[k])


# ---------------------------------------------------------------------------
# the world

@dataclass
class RunResult:
    scenario: Scenario
    metrics: MetricsReport
    verdicts: dict  # monitor name -> (passed, detail)
    trace_digest: str
    world: "World"

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.verdicts.values())

    def verdict_lines(self) -> list[str]:
        return [f"{'PASS' if ok else 'FAIL'} {name}: {detail}" for name, (ok, detail) in
                sorted(self.verdicts.items())]

    def verdicts_json(self) -> str:
        return json.dumps({k: [ok, d] for k, (ok, d) in sorted(self.verdicts.items())}, sort_keys=True)


class World:
    """Every component of one run, wired into a simulator."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        cfg = sc.config
        if sc.mode is Mode.NO_SHIM:
            cfg = dataclasses.replace(cfg, n_r=1, f_r=0)
        elif sc.mode is Mode.SERVERLESS_CFT:  # crash-only: 2f+1 nodes, majority f+1
            cfg = dataclasses.replace(cfg, n_r=2 * cfg.f_r + 1)
        self.cfg = cfg
        self.sim = Simulator(sc.network, seed=sc.seed, timing=sc.timing, quorum=cfg.quorum, trace=sc.trace)
        self.sim.audit_signatures = sc.audit_signatures
        self.sim.spawn_hook = self._spawn
        self.store = VersionedStore(sc.workload.keyspace, 0, sc.seed)
        self.initial = StoreImage(self.store.keyspace, self.store.seed, self.store.initial_value,
                                  dict(self.store.records))
        self.storage = StorageNode(self.store)
        self.sim.register(self.storage, sc.storage_region)
        self.verifier: Optional[Verifier] = None
        if sc.mode is not Mode.PBFT_ON_SHIM:
            self.verifier = Verifier(cfg, self.store, require_cert=sc.mode is Mode.SERVERLESS_BFT)
            self.sim.register(self.verifier, "onprem")
        self.nodes: list = []
        self.byzantine: set[int] = set()
        for i in range(cfg.n_r):
            strategies = [adversary.build_strategy(n, p) for n, p in sc.byzantine_nodes.get(i, [])]
            if strategies:
                self.byzantine.add(i)
            if sc.mode is Mode.SERVERLESS_BFT:
                node = ShimNode(shim(i), cfg, strategies)
            elif sc.mode is Mode.PBFT_ON_SHIM:
                node = PbftReplica(shim(i), cfg, sc.timing, strategies)
            elif sc.mode is Mode.NO_SHIM:
                node = NoShimNode(shim(i), cfg)
            else:
                node = CftNode(shim(i), cfg)
            self.nodes.append(node)
            self.sim.register(node, "edge")
        self.clients: list[Client] = []
        wl_rng_seed = sc.seed
        for c in range(sc.workload.num_clients):
            rng = stream_rng(wl_rng_seed, f"workload/{c}")
            script = sc.script.get(c)
            if script is None and sc.script:
                script = []  # scripted scenarios: unnamed clients stay idle
            if sc.mode is Mode.PBFT_ON_SHIM:
                cl = PbftClient(c, sc.workload, rng, cfg.n_r, cfg.client_timer, script, f_r=cfg.f_r)
            else:
                cl = Client(c, sc.workload, rng, cfg.n_r, cfg.client_timer, script)
            self.clients.append(cl)
            self.sim.register(cl, "client")
        self.executors: list[Executor] = []
        self.spawned_by: dict[Identity, int] = {}
        self.spawned_for: dict[int, list[tuple[Identity, bool]]] = {}  # seq -> (spawner, honest)
        self._spawn_index: dict[int, int] = {}
        self.storage_violation: Optional[str] = None

    def _spawn(self, spawner: Identity, msg: Any, ob: Any) -> Identity:
        body = msg.payload if isinstance(msg, SignedMessage) else msg
        seq = body.seq if isinstance(body, Execute) else -1
        index = self._spawn_index.get(seq, 0)
        self._spawn_index[seq] = index + 1
        behavior = self.sc.executor_faults.behavior_for(index)
        eid = Identity(Role.EXECUTOR, len(self.executors))
        regions = self.sc.executor_regions
        region = regions[index % len(regions)]  # i-th executor of every seq lands in the same region
        ex = Executor(eid, spawner, self.cfg, self.sc.timing, behavior,
                      require_cert=self.sc.mode is Mode.SERVERLESS_BFT, region=region)
        self.executors.append(ex)
        self.sim.register(ex, region)
        self.spawned_by[spawner] = self.spawned_by.get(spawner, 0) + 1
        honest_spawner = spawner.role is Role.SHIM and spawner.id not in self.byzantine
        self.spawned_for.setdefault(seq, []).append((spawner, honest_spawner and not behavior.byzantine))
        return eid

    def honest_nodes(self) -> list:
        return [n for n in self.nodes if n.me.id not in self.byzantine]

    def run(self) -> None:
        sc = self.sc
        for cl in self.clients:
            cl.start()
        for cl in self.clients:
            self.sim.kick(cl)
        step = 100 * MS
        t = 0
        end = sc.duration
        try:
            while t < end and self.sim.halted is None:
                t = min(t + step, end)
                self.sim.run(until=t)
                if self._all_done():
                    break
            for cl in self.clients:
                cl.stopped = True
            if sc.drain and not self._all_done():
                end2 = end + sc.drain
                while t < end2:
                    t = min(t + step, end2)
                    self.sim.run(until=t)
                    if self._all_done():
                        break
        except StorageViolation as e:
            self.storage_violation = str(e)
            self.sim.halt("storage violation")
        self.end_time = self.sim.now

    def _all_done(self) -> bool:
        budget = self.sc.workload.txns_per_client
        if self.sc.script:
            return all(len(cl.outcomes) == len(cl.script or []) for cl in self.clients)
        if budget is None:
            return False
        return all(len(cl.issued) >= budget and not cl.pending for cl in self.clients)


# ---------------------------------------------------------------------------
# monitors

def check_invariants(w: World) -> dict:
    sc = w.sc
    v: dict[str, tuple[bool, str]] = {}
    honest = w.honest_nodes()
    if sc.mode in (Mode.SERVERLESS_BFT, Mode.PBFT_ON_SHIM):
        # shim consistency / non-divergence: one digest per seq across honest nodes
        per_seq: dict[int, set] = {}
        for n in honest:
            for s, e in n.committed.items():
                per_seq.setdefault(s, set()).add(e.digest)
        bad = sorted(s for s, ds in per_seq.items() if len(ds) > 1)
        v["shim_consistency"] = (not bad, f"{len(per_seq)} seqs agreed" if not bad else f"divergent seqs {bad[:5]}")
        div = sum(getattr(n, "divergences", 0) for n in honest)
        v["shim_non_divergence"] = (div == 0, f"{div} re-commits with a different digest")
    if w.verifier is not None:
        ver = w.verifier
        seqs = sorted(ver.done_seqs)
        gapless = seqs == list(range(1, ver.k_max))
        applied = [(s, i) for s, i, _ in w.store.applied]
        ordered = all(a < b for a, b in zip(applied, applied[1:]))
        v["verifier_non_divergence"] = (gapless and ordered,
                                        f"k_max={ver.k_max}, {len(applied)} ordered applies"
                                        if gapless and ordered else "gap or out-of-order apply")
        outsiders = {c for c in w.store.write_callers if c != VERIFIER}
        ok = not outsiders and w.storage_violation is None
        v["write_exclusivity"] = (ok, "only the verifier wrote" if ok else
                                  f"writes attempted by {sorted(map(repr, outsiders))}")
        verdict = run_oracle(w)
        v["serializability"] = (verdict.passed, f"{verdict.checked} txns replayed"
                                if verdict.passed else verdict.counterexample)
    if sc.audit_signatures:
        v["forgery_impossibility"] = (w.sim.forgeries == 0, f"{w.sim.forgeries} forged messages delivered")
    conflicting = sum(cl.conflicting_replies for cl in w.clients)
    v["response_uniqueness"] = (conflicting == 0, f"{conflicting} conflicting replies")
    if sc.workload.closed_loop and not sc.script:
        worst = max((cl.max_pending for cl in w.clients), default=0)
        v["closed_loop_discipline"] = (worst <= 1, f"max {worst} pending per client")
    if sc.expect_liveness:
        missing = sum(len(cl.pending) for cl in w.clients)
        issued = sum(len(cl.issued) for cl in w.clients)
        v["liveness"] = (missing == 0 and issued > 0, f"{issued - missing}/{issued} txns finished")
    return v


def run_oracle(w: World) -> OracleVerdict:
    responses = {}
    for cl in w.clients:
        for nonce, o in cl.outcomes.items():
            if o.kind == "response":
                responses[(cl.me.id, nonce)] = o.result
    log_ = audit_log(w.verifier.validated, responses)
    return serializability_oracle(log_, w.initial, w.store.snapshot_bytes())


# ---------------------------------------------------------------------------
# metrics

def collect_metrics(w: World) -> MetricsReport:
    sc = w.sc
    lo, hi = sc.warmup, min(sc.duration, getattr(w, "end_time", sc.duration))
    lat = []
    ok = aborted = 0
    issued = committed_all = aborted_all = 0
    for cl in w.clients:
        issued += len(cl.issued)
        for o in cl.outcomes.values():
            if o.kind == "response":
                committed_all += 1
            else:
                aborted_all += 1
            if lo <= o.done_at <= hi:
                lat.append((o.done_at - o.sent_at) / MS)
                if o.kind == "response":
                    ok += 1
                else:
                    aborted += 1
    window = max(hi - lo, 0) / SECOND
    rates = w.cfg.cost
    cost: dict[str, float] = {}
    spawns = 0
    for spawner, n in sorted(w.spawned_by.items()):
        cost[repr(spawner)] = cost.get(repr(spawner), 0.0) + n * rates.spawn
        spawns += n
    elapsed = getattr(w, "end_time", sc.duration) / SECOND
    for node in w.nodes:
        cost[repr(node.me)] = cost.get(repr(node.me), 0.0) + elapsed * rates.node_second
    total = sum(cost.values())
    per_k = (total * 100) / (committed_all / 1000) if committed_all else 0.0
    msgs = {k.value: n for k, n in sorted(w.sim.sent_counts.items(), key=lambda kv: kv[0].value)}
    byts = {k: n * MESSAGE_SIZE[MessageKind(k)] for k, n in msgs.items()}
    views = [getattr(n, "view", 0) for n in w.honest_nodes()] or [0]
    changes = max((len(getattr(n, "views_installed", [0])) - 1 for n in w.honest_nodes()), default=0)
    return MetricsReport(
        scenario=sc.name, mode=sc.mode.value, seed=sc.seed, issued=issued,
        committed=committed_all, aborted=aborted_all,
        throughput=round(ok / window, 3) if window > 0 else 0.0,
        latency_p50_ms=round(percentile(lat, 50), 3), latency_p99_ms=round(percentile(lat, 99), 3),
        abort_rate=round(aborted / (ok + aborted), 4) if ok + aborted else 0.0,
        view=max(views), view_changes=changes, spawns=spawns,
        cost_cents_per_ktxn=round(per_k, 6), cost_total=total, cost_by_identity=cost,
        messages=msgs, bytes=byts, total_bytes=sum(byts.values()))


# ---------------------------------------------------------------------------
# entry points

def run_scenario(sc: Scenario | str | Path, overrides: Optional[dict] = None) -> RunResult:
    if not isinstance(sc, Scenario):
        sc = load_scenario(sc, overrides)
    sc.validate()
    w = World(sc)
    w.run()
    verdicts = check_invariants(w)
    metrics = collect_metrics(w)
    return RunResult(sc, metrics, verdicts, w.sim.trace.digest(), w)


def write_outputs(res: RunResult, out_dir: str | Path) -> dict:
    """Metrics CSV/JSON, line-delimited trace and verdict summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = res.scenario.name
    paths = {
        "metrics": out / f"{stem}.metrics.json",
        "trace": out / f"{stem}.trace.txt",
        "verdicts": out / f"{stem}.verdicts.txt",
        "snapshot": out / f"{stem}.store.bin",
    }
    paths["metrics"].write_text(res.metrics.to_json() + "\n")
    with open(paths["trace"], "w") as fh:
        for line in res.world.sim.trace.lines():
            fh.write(line + "\n")
    paths["verdicts"].write_text("\n".join(res.verdict_lines()) + "\n")
    paths["snapshot"].write_bytes(res.world.store.snapshot_bytes())
    return paths


def sweep(template: str | Path | dict, axis: str, values: list, seeds: Optional[list] = None) -> list[dict]:
    """One run per (value, seed); returns CSV-ready rows (see ``CSV_COLUMNS``)."""
    if isinstance(template, dict):
        raw = template
    else:
        with open(template) as fh:
            raw = yaml.safe_load(fh) or {}
    rows = []
    for val in values:
        for seed in seeds or [raw.get("seed", 0)]:
            tree = copy.deepcopy(raw)
            set_dotted(tree, axis, val)
            tree["seed"] = seed
            res = run_scenario(scenario_from_dict(tree))
            m = res.metrics
            row = {c: getattr(m, c) for c in CSV_COLUMNS if hasattr(m, c)}
            row.update(axis=axis, value=val, passed=res.passed)
            rows.append(row)
    return rows


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS + ["passed"], lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r.get(k) for k in CSV_COLUMNS + ["passed"]})
    return buf.getvalue()


def fingerprint(res: RunResult) -> str:
    """Digest over trace, metrics and verdicts: equal for byte-identical reruns."""
    h = hashlib.sha256()
    h.update(res.trace_digest.encode())
    h.update(res.metrics.to_json().encode())
    h.update(res.verdicts_json().encode())
    h.update(encode(res.world.verifier.observations) if res.world.verifier else b"")
    return h.hexdigest()
