"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL verdict line; the lines are echoed as they are
produced and collected again in the terminal summary.  Run standalone with
``python3 tests/test_acceptance.py``.

Paired event logs from the policy-benefit run are archived under
``acceptance_artifacts/`` at the repository root (override with
``NEUROFLOW_ARTIFACTS``).
"""

import gzip
import hashlib
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from neuroflow.cli import main as cli_main
from neuroflow.errors import CycleDetected
from neuroflow.flowgraph import ProgramNode, build_graph, extract_subgraphs
from neuroflow.platforms import PlatformSnapshot
from neuroflow.predictor.features import featurize
from neuroflow.predictor.metrics import baseline_model_only, evaluate, regression_metrics
from neuroflow.predictor.model import PARAM_BUDGET_BYTES, forward, save_params, to_bytes
from neuroflow.predictor.train import TrainConfig, train
from neuroflow.scenario import fairness_scenario, preset
from neuroflow.simulator import audit_priority, compare_policies, run
from neuroflow.tracegen import generate_traces
from neuroflow.traces import write_traces

from . import oracles

pytestmark = pytest.mark.slow

VERDICTS: list[str] = []
ARTIFACTS = Path(os.environ.get("NEUROFLOW_ARTIFACTS", Path(__file__).resolve().parents[1] / "acceptance_artifacts"))


def verdict(n, title, ok, detail):
    line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def standard():
    """The standard synthetic dataset (24 h virtual, seed 42) and a predictor trained on it."""
    ts = generate_traces(preset("traces", seed=42))
    t0 = time.perf_counter()
    res = train(ts, TrainConfig(seed=42))
    return ts, res, time.perf_counter() - t0


def test_c01_graph_oracle_equivalence():
    rng = np.random.default_rng(500)
    t0 = time.perf_counter()
    mismatches = cyclic = 0
    for _ in range(500):
        ids, edges = oracles.random_digraph(rng)
        graph = build_graph([ProgramNode(i) for i in ids], edges)
        if oracles.has_cycle(ids, edges):
            cyclic += 1
            try:
                extract_subgraphs(graph)
                mismatches += 1
            except CycleDetected:
                pass
            continue
        subs = extract_subgraphs(graph)
        if [s.end_node for s in subs] != oracles.end_nodes(ids, edges):
            mismatches += 1
            continue
        for s in subs:
            members = oracles.members_of(ids, edges, s.end_node)
            ok = (set(s.members) == members
                  and oracles.is_topological(list(s.topo_order), members, edges)
                  and list(s.topo_order) == oracles.lex_first_topological(members, edges)
                  and dict(s.priority) == oracles.longest_path_to(members, edges, s.end_node))
            mismatches += not ok
    dt = time.perf_counter() - t0
    verdict(1, "graph oracle equivalence", mismatches == 0 and dt < 10.0,
            f"500 digraphs ({cyclic} cyclic), {mismatches} mismatches, {dt:.2f} s")


def test_c02_metric_formulas():
    rmse, rmspe, _, acc10 = regression_metrics([11, 9, 30], [10, 10, 20])
    ok = abs(rmse - 5.831) <= 1e-3 and abs(rmspe - 30.0) <= 1e-3 and abs(acc10 - 66.7) <= 0.1
    verdict(2, "metric formulas", ok, f"RMSE {rmse:.4f} ms, RMSPE {rmspe:.4f}%, acc10 {acc10:.2f}%")


def test_c03_predictor_learnability(standard):
    ts, res, train_s = standard
    rep = evaluate(res.params, [ts.records[i] for i in res.val_idx], ts.catalog, ts.platforms)
    good = [p for p, m in rep.per_platform.items() if m.acc10_pct >= 90.0 and m.rmspe_pct <= 10.0]
    detail = ", ".join(f"{p} acc10 {m.acc10_pct:.1f}% RMSPE {m.rmspe_pct:.2f}%" for p, m in rep.per_platform.items())
    verdict(3, "predictor learnability", len(good) >= 2 and train_s <= 300.0,
            f"{detail}; {len(good)}/3 platforms meet target; trained in {train_s:.0f} s")


def test_c04_platform_level_beats_model_only():
    gaps = []
    for seed in range(5):
        ts = generate_traces(preset("traces", seed=seed, duration_ms=6 * 3600e3))
        res = train(ts, TrainConfig(seed=seed, epochs=20))
        tr = [ts.records[i] for i in res.train_idx]
        va = [ts.records[i] for i in res.val_idx]
        ours = evaluate(res.params, va, ts.catalog, ts.platforms)
        base = baseline_model_only(tr, va, ts.catalog, ts.platforms)
        gaps.append(statistics.fmean(ours.per_platform[p].acc10_pct - base.per_platform[p].acc10_pct
                                     for p in ours.per_platform))
    mean = statistics.fmean(gaps)
    verdict(4, "platform-level beats model-only", mean >= 10.0,
            f"mean acc10 gap {mean:.1f} pp over 5 seeds (per seed {', '.join(f'{g:.1f}' for g in gaps)})")


def test_c05_budget_and_forward_speed(standard):
    ts, res, _ = standard
    size = len(to_bytes(res.params))
    snaps = [PlatformSnapshot(p.id, 0.0, 0.4, 0.1, 2000.0, 0.5, 300.0) for p in ts.platforms]
    fv = featurize(ts.catalog["det3d"], snaps, 2, res.params.normalizer, ts.platforms)
    forward(res.params, fv)
    times = []
    for _ in range(500):
        t0 = time.perf_counter()
        forward(res.params, fv)
        times.append(time.perf_counter() - t0)
    med = statistics.median(times) * 1e3
    verdict(5, "parameter budget and forward speed", size <= PARAM_BUDGET_BYTES and med <= 5.0,
            f"{size} bytes (limit {PARAM_BUDGET_BYTES}), median forward {med * 1e3:.0f} us (limit 5 ms)")


def test_c06_gradient_check():
    errs = [oracles.grad_check(seed) for seed in range(20)]
    verdict(6, "gradient check", max(errs) <= 1e-4, f"worst relative error {max(errs):.2e} over 20 instances")


def test_c07_cfs_fairness():
    eq = run(fairness_scenario(0, 0, duration_ms=10_000.0)).report.cpu_share
    gap = run(fairness_scenario(0, 5, duration_ms=10_000.0)).report.cpu_share
    diff = abs(eq["a"] - eq["b"])
    ratio = gap["a"] / gap["b"]
    ok = diff <= 0.05 and abs(ratio - 3.05) / 3.05 <= 0.10
    verdict(7, "CFS fairness", ok, f"equal-nice share gap {diff * 100:.2f}%, nice-gap-5 ratio {ratio:.3f} (target 3.05)")


def test_c08_priority_ordering(standard):
    _, res, _ = standard
    result = run(preset("overload", seed=0, duration_ms=150_000.0), "neuroflow", res.params)
    bad = audit_priority(result.events, result.analysis)
    n = len(result.events)
    verdict(8, "priority ordering", n >= 100_000 and not bad, f"{len(bad)} violations in a {n}-event log")


def _archive_log(events, path):
    # fixed mtime keeps the archive byte-reproducible
    with open(path, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0) as fh:
        for ev in events:
            fh.write((json.dumps(ev.to_dict(), sort_keys=True) + "\n").encode())


def test_c09_policy_benefit(standard):
    _, res, _ = standard
    out = ARTIFACTS / "policy_benefit"
    out.mkdir(parents=True, exist_ok=True)
    rows, wins = [], 0
    for seed in range(5):
        comp, results = compare_policies(preset("overload", seed=seed), ("neuroflow", "fifo"), res.params)
        nf = comp.reports["neuroflow"].control_response_ms["p99"]
        ff = comp.reports["fifo"].control_response_ms["p99"]
        wins += nf is not None and ff is not None and nf <= ff
        rows.append({"seed": seed, "neuroflow_p99_ms": nf, "fifo_p99_ms": ff})
        for name, r in results.items():
            _archive_log(r.events, out / f"seed{seed}.{name}.events.jsonl.gz")
            (out / f"seed{seed}.{name}.report.json").write_text(r.report.to_json() + "\n")
    (out / "summary.json").write_text(json.dumps({"seeds": rows, "wins": wins}, indent=2) + "\n")
    pairs = ", ".join(f"{r['neuroflow_p99_ms']:.0f} vs {r['fifo_p99_ms']:.0f}" for r in rows)
    verdict(9, "policy benefit under overload", wins >= 4,
            f"neuroflow p99 <= fifo p99 in {wins}/5 seeds ({pairs} ms); logs in {out}")


def _tree_digest(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_c10_cli_determinism(tmp_path):
    graph = tmp_path / "g.json"
    graph.write_text(json.dumps({"nodes": [{"id": "A", "period_ms": 100}, {"id": "B"}, {"id": "C"}],
                                 "edges": [["A", "B"], ["B", "C"]]}))
    scen = tmp_path / "s.json"
    scen.write_text(json.dumps({"preset": "traces", "duration_ms": 1800_000}))
    traces = tmp_path / "t.jsonl"
    write_traces(generate_traces(preset("traces", seed=1, duration_ms=1800_000)), traces)
    params = tmp_path / "p.bin"
    from neuroflow.traces import read_traces
    save_params(train(read_traces(traces), TrainConfig(epochs=3)).params, params)

    cases = {
        "graph": lambda d: ["graph", "--graph", str(graph), "--out", str(d / "g.json")],
        "traces": lambda d: ["traces", "--scenario", str(scen), "--seed", "7", "--out", str(d / "t.jsonl")],
        "train": lambda d: ["train", "--traces", str(traces), "--epochs", "2", "--seed", "4", "--out", str(d / "p.bin")],
        "eval": lambda d: ["eval", "--traces", str(traces), "--params", str(params), "--out", str(d / "m.json")],
        "simulate": lambda d: ["simulate", "--scenario", "overload", "--set", "duration_ms=5000", "--seed", "3",
                               "--policy", "neuroflow,fifo,roundrobin", "--params", str(params),
                               "--out", str(d / "sim")],
    }
    same = []
    for name, argv in cases.items():
        digests = []
        for i in range(2):
            d = tmp_path / name / f"run{i}"
            d.mkdir(parents=True)
            code = cli_main(argv(d))
            digests.append((code, _tree_digest(d)))
        if digests[0] == digests[1] and digests[0][0] == 0 and digests[0][1]:
            same.append(name)
    verdict(10, "CLI determinism", len(same) == len(cases),
            f"byte-identical reruns for {len(same)}/{len(cases)} subcommands ({', '.join(same)})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
