"""Deterministic discrete-event simulation of a dataflow graph under a policy.

Sources release periodically.  A downstream node releases once every one
of its inputs has produced fresh output since its last release.  CPU work
runs non-preemptively on `cpu_cores` cores; DNN work runs concurrently on
the accelerators as long as memory admits it.  Identical inputs give
byte-identical event logs.
"""

from __future__ import annotations

import heapq
import json
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import PredictorUnavailable
from .flowgraph import GraphAnalysis, NodeKind, analyze, default_nice
from .platforms import PlatformSnapshot, PlatformState, sample_telemetry, true_cpu_load
from .scenario import Scenario, background_at
from .scheduler import POLICIES, Predictor, ScheduleEvent, TaskInstance, make_policy
from .workload import latency_ground_truth, sub_rng

log = logging.getLogger(__name__)

# same-time ordering: completions free resources before anything new arrives
_COMPLETE, _RELEASE, _TELEMETRY = 0, 1, 2


@dataclass
class SimReport:
    scenario: str
    policy: str
    seed: int
    duration_ms: float
    released: int
    completed: int
    in_flight: int
    pending: int
    completions: dict[str, int]
    control_node: str | None
    control_response_ms: dict[str, float | None]
    cpu_share: dict[str, float]
    rejected_events: int
    deferred_tasks: int
    degraded_dispatches: int
    placements: dict[str, int]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass
class SimResult:
    report: SimReport
    events: list[ScheduleEvent]
    tasks: dict[str, TaskInstance]
    analysis: GraphAnalysis
    completion_t: dict[str, float] = field(default_factory=dict)

    def write_log(self, path: str | Path) -> None:
        write_event_log(self.events, path)


def write_event_log(events: Iterable[ScheduleEvent], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps(ev.to_dict(), sort_keys=True) + "\n")


def read_event_log(path: str | Path) -> list[ScheduleEvent]:
    with open(path) as fh:
        return [ScheduleEvent(**json.loads(line)) for line in fh if line.strip()]


def scenario_analysis(sc: Scenario) -> GraphAnalysis:
    nice = default_nice(sc.graph, sc.control_node)
    nice.update(sc.nice)
    return analyze(sc.graph, nice)


def _percentiles(values: Sequence[float]) -> dict[str, float | None]:
    if not values:
        return {"n": 0, "p50": None, "p95": None, "p99": None, "max": None}
    a = np.asarray(values, dtype=np.float64)
    p50, p95, p99 = np.percentile(a, [50, 95, 99])
    return {"n": len(a), "p50": float(p50), "p95": float(p95), "p99": float(p99), "max": float(a.max())}


def _resolve_predictor(sc: Scenario, policy: str, predictor) -> Predictor | None:
    if policy != "neuroflow":
        return None
    if predictor is None and sc.params_path:
        from .predictor.model import load_params
        predictor = load_params(sc.params_path)
    if predictor is None or isinstance(predictor, Predictor):
        return predictor
    try:
        return Predictor(predictor, sc.platforms, sc.catalog)
    except PredictorUnavailable as exc:
        log.warning("predictor unusable (%s); using static table", exc)
        return None


class _Sim:
    def __init__(self, sc: Scenario, policy_name: str, predictor):
        self.sc = sc
        self.graph = sc.graph
        self.analysis = scenario_analysis(sc)
        self.policy = make_policy(policy_name, self.analysis, sc.oracle,
                                  _resolve_predictor(sc, policy_name, predictor))
        self.plats = {pid: PlatformState(p) for pid, p in sc.platform_map.items()}
        self.heap: list = []
        self.seq = 0
        self.events: list[ScheduleEvent] = []
        self.tasks: dict[str, TaskInstance] = {}
        self.completion_t: dict[str, float] = {}
        self.node_count: Counter = Counter()
        self.fresh: dict[str, dict[str, TaskInstance]] = {n: {} for n in self.graph.nodes}
        self.free_cores = sc.cpu_cores
        self.running_cpu: dict[str, TaskInstance] = {}
        self.snapshots: dict[str, PlatformSnapshot] = {}
        self.batch_rng = sub_rng(sc.seed, "sim-batch")
        self.noise_rng = sub_rng(sc.oracle.seed if sc.oracle.seed is not None else sc.seed, "sim-noise")
        self.cpu_time: dict[str, float] = defaultdict(float)
        self.responses: list[float] = []
        self.rejected = 0
        self.deferred: set[str] = set()
        self.degraded = 0
        self.placements: Counter = Counter()
        self._start: dict[str, float] = {}

    # -- bookkeeping ---------------------------------------------------------

    def push(self, t: float, kind: int, key: str, payload) -> None:
        heapq.heappush(self.heap, (t, kind, key, self.seq, payload))
        self.seq += 1

    def emit(self, task: TaskInstance, event: str, t: float, platform_id=None, predicted=None, actual=None):
        self.events.append(ScheduleEvent(task.id, event, t, task.node_id,
                                         "dnn" if task.kind is NodeKind.DNN else "non_dnn",
                                         platform_id, predicted, actual))

    def _bg(self, pid: str, t: float) -> float:
        return background_at(self.sc.background_load, self.plats[pid].descriptor.host, t, self.sc.seed)

    def refresh(self, pid: str, t: float) -> None:
        st = self.plats[pid]
        self.snapshots[pid] = sample_telemetry(st.descriptor, list(st.active.values()), t, self.sc.seed,
                                               background=self._bg(pid, t),
                                               queue_depth=len(self.policy.pending_dnn()),
                                               model=self.sc.telemetry)

    # -- task lifecycle ------------------------------------------------------

    def release(self, node_id: str, t: float, deps: Sequence[TaskInstance]) -> None:
        node = self.graph.nodes[node_id]
        k = self.node_count[node_id]
        self.node_count[node_id] += 1
        batch, mem, model_id = 1, 0.0, None
        if node.kind is NodeKind.DNN:
            values, probs = self.sc.batch_choices(node_id)
            batch = int(self.batch_rng.choice(values, p=probs))
            model_id = node.model_ref
            mem = self.sc.catalog[model_id].memory_mb
        task = TaskInstance(
            id=f"{node_id}#{k}",
            node_id=node_id,
            kind=node.kind,
            release_t_ms=t,
            batch=batch,
            memory_mb=mem,
            deps=tuple(d.id for d in deps),
            nice=self.analysis.node_nice[node_id],
            priority=self.analysis.node_priority[node_id],
            subgraph=self.analysis.node_subgraph[node_id],
            cost_ms=node.cost_hint_ms,
            model_id=model_id,
            origin_t_ms=min((d.origin_t_ms for d in deps), default=t),
        )
        self.tasks[task.id] = task
        self.emit(task, "enqueued", t)
        self.policy.enqueue(task)

    def complete(self, task: TaskInstance, t: float) -> None:
        if task.kind is NodeKind.DNN:
            self.plats[task.platform_id].complete(task.id)
        else:
            del self.running_cpu[task.id]
            self.free_cores += 1
        self.completion_t[task.id] = t
        self.emit(task, "completed", t, task.platform_id,
                  actual=t - self._start[task.id])
        if task.node_id == self.sc.control_node:
            self.responses.append(t - task.origin_t_ms)
        for succ in self.graph.successors(task.node_id):
            inputs = self.fresh[succ]
            inputs[task.node_id] = task
            preds = self.graph.predecessors(succ)
            if all(p in inputs for p in preds):
                deps = [inputs[p] for p in preds]
                inputs.clear()
                self.release(succ, t, deps)

    def dispatch(self, t: float) -> None:
        horizon = self.sc.duration_ms
        while self.free_cores > 0:
            task = self.policy.next_non_dnn()
            if task is None:
                break
            self.free_cores -= 1
            self.running_cpu[task.id] = task
            self._start[task.id] = t
            self.emit(task, "dispatched", t)
            self.emit(task, "started", t)
            self.policy.account(task.subgraph, task.cost_ms)
            self.cpu_time[task.subgraph] += max(0.0, min(t + task.cost_ms, horizon) - min(t, horizon))
            self.push(t + task.cost_ms, _COMPLETE, task.id, task)

        for task in self.policy.pending_dnn():
            for pid in self.plats:
                if pid not in self.snapshots or t - self.snapshots[pid].t_ms > self.sc.staleness_ms:
                    self.refresh(pid, t)
            dec = self.policy.place(task, self.snapshots, self.plats)
            if dec.platform_id is None:
                self.rejected += 1
                self.deferred.add(task.id)
                self.emit(task, "rejected", t)
                continue
            st = self.plats[dec.platform_id]
            n_before = len(st.active)
            if st.admit(task) is not None:  # policy ignored memory; treat as rejection
                self.rejected += 1
                self.deferred.add(task.id)
                self.emit(task, "rejected", t)
                continue
            self.policy.remove_dnn(task)
            task.platform_id = dec.platform_id
            self.degraded += dec.degraded
            self.placements[f"{task.model_id}@{dec.platform_id}"] += 1
            load = true_cpu_load(n_before, self._bg(dec.platform_id, t))
            lat = latency_ground_truth(self.sc.catalog[task.model_id], dec.platform_id, task.batch, load,
                                       self.sc.oracle, self.noise_rng)
            self._start[task.id] = t
            self.emit(task, "dispatched", t, dec.platform_id, dec.predicted_latency_ms)
            self.emit(task, "started", t, dec.platform_id)
            self.policy.account(task.subgraph, self.sc.dnn_cpu_fraction * lat)
            self.push(t + lat, _COMPLETE, task.id, task)

    # -- main loop -----------------------------------------------------------

    def run(self) -> SimResult:
        sc = self.sc
        for nid in self.graph.sources():
            node = self.graph.nodes[nid]
            if node.period_ms:
                self.push(0.0, _RELEASE, nid, (nid, 0))
        if sc.telemetry_period_ms > 0:
            self.push(0.0, _TELEMETRY, "", 0)

        while self.heap and self.heap[0][0] <= sc.duration_ms:
            t = self.heap[0][0]
            while self.heap and self.heap[0][0] == t:
                _, kind, _, _, payload = heapq.heappop(self.heap)
                if kind == _COMPLETE:
                    self.complete(payload, t)
                elif kind == _RELEASE:
                    nid, k = payload
                    self.release(nid, t, ())
                    nxt = (k + 1) * self.graph.nodes[nid].period_ms
                    if nxt < sc.duration_ms:
                        self.push(nxt, _RELEASE, nid, (nid, k + 1))
                else:
                    for pid in self.plats:
                        self.refresh(pid, t)
                    nxt = (payload + 1) * sc.telemetry_period_ms
                    if nxt < sc.duration_ms:
                        self.push(nxt, _TELEMETRY, "", payload + 1)
            self.dispatch(t)
        return SimResult(self._report(), self.events, self.tasks, self.analysis, self.completion_t)

    def _report(self) -> SimReport:
        sc = self.sc
        done = Counter(self.tasks[tid].node_id for tid in self.completion_t)
        in_flight = len(self.running_cpu) + sum(len(p.active) for p in self.plats.values())
        pending = len(self.policy.pending_dnn()) + self.policy.pending_non_dnn()
        capacity = sc.duration_ms * sc.cpu_cores
        shares = {s.id: self.cpu_time.get(s.id, 0.0) / capacity for s in self.analysis.subgraphs}
        return SimReport(
            scenario=sc.name,
            policy=self.policy.name,
            seed=sc.seed,
            duration_ms=sc.duration_ms,
            released=len(self.tasks),
            completed=len(self.completion_t),
            in_flight=in_flight,
            pending=pending,
            completions={n: done.get(n, 0) for n in sorted(self.graph.nodes)},
            control_node=sc.control_node,
            control_response_ms=_percentiles(self.responses),
            cpu_share=shares,
            rejected_events=self.rejected,
            deferred_tasks=len(self.deferred),
            degraded_dispatches=self.degraded,
            placements=dict(sorted(self.placements.items())),
        )


def run(sc: Scenario, policy: str = "neuroflow", predictor=None) -> SimResult:
    """Simulate `sc` for its duration.

    `predictor` may be trained params, a ready `Predictor`, or None (then
    ``sc.params_path`` is tried, and failing that DNN placement falls back
    to the static base-latency table).
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
    return _Sim(sc, policy, predictor).run()


@dataclass
class Comparison:
    reports: dict[str, SimReport]
    reference: str

    def deltas(self) -> dict[str, dict[str, float | None]]:
        """Paired differences of control-path percentiles against the reference policy."""
        ref = self.reports[self.reference].control_response_ms
        out = {}
        for name, rep in self.reports.items():
            cur = rep.control_response_ms
            out[name] = {k: (None if cur[k] is None or ref[k] is None else cur[k] - ref[k])
                         for k in ("p50", "p95", "p99")}
        return out

    def table(self) -> str:
        d = self.deltas()
        header = ("Policy", "completed", "p50 ms", "p95 ms", "p99 ms", "Δp99 ms")
        rows = []
        for name, rep in self.reports.items():
            r = rep.control_response_ms
            f = (lambda v: "-" if v is None else f"{v:.2f}")
            rows.append((name, str(rep.completed), f(r["p50"]), f(r["p95"]), f(r["p99"]), f(d[name]["p99"])))
        widths = [max(len(x[i]) for x in (header, *rows)) for i in range(len(header))]
        fmt = lambda cells: " | ".join(c.ljust(w) if i == 0 else c.rjust(w)
                                       for i, (c, w) in enumerate(zip(cells, widths)))
        return "\n".join([fmt(header), "-+-".join("-" * w for w in widths), *map(fmt, rows)])


def compare_policies(sc: Scenario, policies: Sequence[str] = ("neuroflow", "fifo", "roundrobin"),
                     predictor=None) -> tuple[Comparison, dict[str, SimResult]]:
    """Run each policy on the same scenario and seed."""
    results = {p: run(sc, p, predictor) for p in policies}
    return Comparison({p: r.report for p, r in results.items()}, policies[0]), results


# --- audits -----------------------------------------------------------------------

def audit_priority(events: Sequence[ScheduleEvent], analysis: GraphAnalysis) -> list[str]:
    """CPU dispatches that skipped a strictly higher-priority ready task of the same subgraph."""
    ready: dict[str, dict[str, int]] = defaultdict(dict)
    bad = []
    for ev in events:
        if ev.queue != "non_dnn":
            continue
        sub = analysis.node_subgraph[ev.node_id]
        if ev.event == "enqueued":
            ready[sub][ev.task_id] = analysis.node_priority[ev.node_id]
        elif ev.event == "dispatched":
            mine = ready[sub].pop(ev.task_id)
            top = max(ready[sub].values(), default=None)
            if top is not None and top > mine:
                bad.append(f"{ev.task_id} (priority {mine}) ran before a ready task of priority {top}")
    return bad


_STAGE = {"enqueued": 0, "dispatched": 1, "started": 2, "completed": 3}


def audit_lifecycle(events: Sequence[ScheduleEvent]) -> list[str]:
    """Every task moves enqueued -> dispatched -> started -> completed with non-decreasing time.

    A task may be rejected any number of times while still queued.
    """
    last: dict[str, tuple[int, float]] = {}
    bad = []
    for ev in events:
        prev = last.get(ev.task_id)
        if prev is None:
            if ev.event != "enqueued":
                bad.append(f"{ev.task_id}: first event {ev.event}")
            last[ev.task_id] = (0, ev.t_ms)
            continue
        if ev.t_ms < prev[1]:
            bad.append(f"{ev.task_id}: time went backwards at {ev.event}")
        if ev.event == "rejected":
            if prev[0] != 0:
                bad.append(f"{ev.task_id}: rejected after dispatch")
            last[ev.task_id] = (0, ev.t_ms)
            continue
        stage = _STAGE[ev.event]
        if stage != prev[0] + 1:
            bad.append(f"{ev.task_id}: {ev.event} out of order")
        last[ev.task_id] = (stage, ev.t_ms)
    return bad


def audit_causality(result: SimResult) -> list[str]:
    """No task was released before all of its dependencies completed."""
    bad = []
    for task in result.tasks.values():
        for dep in task.deps:
            done = result.completion_t.get(dep)
            if done is None or done > task.release_t_ms:
                bad.append(f"{task.id} released at {task.release_t_ms} before {dep} completed")
    return bad


def audit_conservation(report: SimReport) -> list[str]:
    total = report.completed + report.in_flight + report.pending
    if total != report.released:
        return [f"released {report.released} != completed+in_flight+pending {total}"]
    return []


def audit_memory(events: Sequence[ScheduleEvent], tasks: Mapping[str, TaskInstance],
                 capacity: Mapping[str, float]) -> list[str]:
    """Replays DNN occupancy and flags any instant above a platform's memory."""
    used: dict[str, float] = defaultdict(float)
    bad = []
    for ev in events:
        if ev.queue != "dnn" or ev.platform_id is None:
            continue
        mem = tasks[ev.task_id].memory_mb
        if ev.event == "started":
            used[ev.platform_id] += mem
            if used[ev.platform_id] > capacity[ev.platform_id] + 1e-9:
                bad.append(f"{ev.platform_id} over capacity at {ev.t_ms}")
        elif ev.event == "completed":
            used[ev.platform_id] -= mem
    return bad
