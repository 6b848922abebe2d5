"""Command-line entry point: ``neuroflow {graph,traces,train,eval,simulate}``.

Exit codes: 0 on success, 1 for input or configuration errors, 2 for
domain errors such as a cyclic graph.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from .errors import CycleDetected, NeuroFlowError
from .flowgraph import analyze, load_graph
from .scenario import PRESETS, Scenario, apply_overrides, load_scenario, preset, replace_fields

log = logging.getLogger("neuroflow")


def _setup_logging() -> None:
    level = os.environ.get("NEUROFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _scenario(args) -> Scenario:
    src = args.scenario
    if src is None:
        raise NeuroFlowError("--scenario is required (file path or preset name)")
    if Path(src).is_file():
        sc = load_scenario(src)
    elif src in PRESETS:
        sc = preset(src)
    else:
        raise NeuroFlowError(f"--scenario {src!r}: no such file or preset ({', '.join(PRESETS)})")
    if args.seed is not None:
        if args.seed < 0:
            raise NeuroFlowError("--seed must be >= 0")
        oracle = copy.copy(sc.oracle)
        oracle.seed = args.seed
        sc = replace_fields(sc, seed=args.seed, oracle=oracle)
    return apply_overrides(sc, args.set or [])


def _out_file(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# --- subcommands ---------------------------------------------------------------

def cmd_graph(args) -> int:
    if not args.graph:
        raise NeuroFlowError("--graph is required")
    graph = load_graph(args.graph)
    an = analyze(graph)
    report = {
        "nodes": len(graph.nodes),
        "edges": len(graph.edges),
        "subgraphs": [
            {"end_node": s.end_node, "topo_order": list(s.topo_order), "priority": dict(s.priority)}
            for s in an.subgraphs
        ],
        "node_priority": dict(an.node_priority),
    }
    for s in an.subgraphs:
        print(f"subgraph {s.end_node}: {' -> '.join(s.topo_order)}")
        print("  priority " + ", ".join(f"{n}:{p}" for n, p in sorted(s.priority.items(), key=lambda kv: (-kv[1], kv[0]))))
    if args.out:
        _out_file(args.out).write_text(_dump(report))
    return 0


def cmd_traces(args) -> int:
    from .tracegen import generate_traces
    from .traces import write_traces

    if not args.out:
        raise NeuroFlowError("--out is required")
    sc = _scenario(args)
    ts = generate_traces(sc, lag_ms=args.lag)
    mpath = write_traces(ts, _out_file(args.out))
    print(f"{len(ts.records)} records, {ts.meta['combination_count']} combinations -> {args.out} ({mpath.name})")
    return 0


def cmd_train(args) -> int:
    from dataclasses import fields

    from .predictor.model import save_params
    from .predictor.train import TrainConfig, train
    from .traces import read_traces

    if not args.traces or not args.out:
        raise NeuroFlowError("--traces and --out are required")
    ts = read_traces(args.traces)
    cfg = TrainConfig(seed=args.seed or 0)
    if args.epochs is not None:
        cfg.epochs = args.epochs
    valid = {f.name for f in fields(TrainConfig)}
    for pair in args.set or []:
        key, _, val = pair.partition("=")
        if key not in valid or not val:
            raise NeuroFlowError(f"bad training override {pair!r}")
        setattr(cfg, key, type(getattr(cfg, key))(json.loads(val)))
    res = train(ts, cfg)
    size = save_params(res.params, _out_file(args.out))
    log_path = Path(args.out).with_name(Path(args.out).name + ".log.json")
    log_path.write_text(_dump({"config": res.params.meta["config"], "history": res.log}))
    last = res.log[-1]
    print(f"saved {size} bytes -> {args.out}; final train loss {last['train_loss']:.5f}"
          + (f", val loss {last['val_loss']:.5f}" if "val_loss" in last else ""))
    return 0


def cmd_eval(args) -> int:
    from .predictor.metrics import baseline_model_only, evaluate, format_comparison, format_table
    from .predictor.model import load_params
    from .predictor.train import split_indices
    from .traces import read_traces

    if not args.traces or not args.params:
        raise NeuroFlowError("--traces and --params are required")
    ts = read_traces(args.traces)
    params = load_params(args.params)
    if args.train_traces:
        fit_records = read_traces(args.train_traces).records
        eval_records = ts.records
    else:
        # reuse the split the params were trained with
        cfg = params.meta.get("config", {})
        tr, va = split_indices(len(ts.records), cfg.get("val_fraction", 0.2), cfg.get("seed", 0))
        fit_records = [ts.records[i] for i in tr]
        eval_records = [ts.records[i] for i in (va if len(va) else tr)]
    ours = evaluate(params, eval_records, ts.catalog, ts.platforms)
    base = baseline_model_only(fit_records, eval_records, ts.catalog, ts.platforms)
    print(format_table(ours))
    print()
    print(format_comparison(base, ours))
    if args.out:
        _out_file(args.out).write_text(_dump({"platform_level": ours.to_dict(), "model_only": base.to_dict()}))
    return 0


def cmd_simulate(args) -> int:
    from .predictor.model import load_params
    from .simulator import compare_policies

    sc = _scenario(args)
    policies = []
    for p in args.policy or ["neuroflow"]:
        policies += [x for x in p.split(",") if x]
    predictor = load_params(args.params) if args.params else None
    cmp, results = compare_policies(sc, policies, predictor)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, res in results.items():
            res.write_log(out / f"{name}.events.jsonl")
            (out / f"{name}.report.json").write_text(res.report.to_json() + "\n")
        if len(policies) > 1:
            (out / "comparison.json").write_text(_dump({"reference": cmp.reference, "deltas": cmp.deltas()}))
    print(cmp.table())
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage errors are input errors; 2 is reserved for domain failures
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="neuroflow", description="Dataflow-aware hybrid scheduling experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "graph" in flags:
            p.add_argument("--graph", help="graph JSON file")
        if "scenario" in flags:
            p.add_argument("--scenario", help=f"scenario JSON file or preset ({', '.join(PRESETS)})")
        if "traces" in flags:
            p.add_argument("--traces", help="trace JSONL file")
        if "params" in flags:
            p.add_argument("--params", help="predictor params file")
        p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a field (repeatable)")

    common(sub.add_parser("graph", help="analyse a dataflow graph"), "graph")
    p = sub.add_parser("traces", help="generate labeled traces")
    common(p, "scenario")
    p.add_argument("--lag", type=float, default=None, help="label lag in ms")
    p = sub.add_parser("train", help="train the latency predictor")
    common(p, "traces")
    p.add_argument("--epochs", type=int, default=None)
    p = sub.add_parser("eval", help="score a predictor against the model-only baseline")
    common(p, "traces", "params")
    p.add_argument("--train-traces", help="records to fit the baseline on (default: the training split)")
    p = sub.add_parser("simulate", help="run one or more scheduling policies")
    common(p, "scenario", "params")
    p.add_argument("--policy", action="append", help="policy name(s), comma separated or repeated")
    return ap


COMMANDS = {"graph": cmd_graph, "traces": cmd_traces, "train": cmd_train, "eval": cmd_eval,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CycleDetected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NeuroFlowError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
