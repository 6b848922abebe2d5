"""Dual-queue hybrid scheduling.

DNN tasks go to a DNN queue and are placed on the platform with the lowest
predicted latency among those that can hold them.  Everything else goes
to a fair-share run queue: each dataflow subgraph accumulates weighted
virtual runtime, the subgraph with the least is served next, and inside it
the ready task with the highest node priority runs first.

FIFO and round-robin policies are provided as baselines.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .errors import NiceOutOfRange, PredictorUnavailable, UnknownSubgraph
from .flowgraph import GraphAnalysis, NodeKind, ProgramNode
from .platforms import PlatformSnapshot, PlatformState
from .workload import LatencyOracleParams, ModelDescriptor

log = logging.getLogger(__name__)

NICE_MIN, NICE_MAX = -20, 19
NICE_0_WEIGHT = 1024


class QueueTag(str, Enum):
    DNN = "dnn"
    NON_DNN = "non_dnn"


def classify(node: ProgramNode) -> QueueTag:
    return QueueTag.DNN if node.model_ref is not None else QueueTag.NON_DNN


def node_priority(node: ProgramNode, analysis: GraphAnalysis | None) -> int:
    """Subgraph-derived priority; 0 for nodes outside any analysed subgraph."""
    if analysis is None:
        return 0
    return analysis.node_priority.get(node.id, 0)


def nice_to_weight(nice: int) -> int:
    """Geometric weight table, 1.25x per nice step, 1024 at nice 0."""
    if not isinstance(nice, int) or not NICE_MIN <= nice <= NICE_MAX:
        raise NiceOutOfRange(nice)
    return round(NICE_0_WEIGHT * 1.25 ** (-nice))


@dataclass
class TaskInstance:
    id: str
    node_id: str
    kind: NodeKind
    release_t_ms: float
    batch: int = 1
    memory_mb: float = 0.0
    deps: tuple[str, ...] = ()
    nice: int = 0
    priority: int = 0
    subgraph: str = ""
    cost_ms: float = 0.0
    model_id: str | None = None
    origin_t_ms: float = 0.0
    platform_id: str | None = None

    def __post_init__(self):
        if self.kind is NodeKind.DNN and self.batch < 1:
            raise ValueError("DNN tasks need batch >= 1")
        if self.release_t_ms < 0:
            raise ValueError("release time must be >= 0")


@dataclass(frozen=True)
class ScheduleEvent:
    task_id: str
    event: str
    t_ms: float
    node_id: str | None = None
    queue: str | None = None
    platform_id: str | None = None
    predicted_latency_ms: float | None = None
    actual_latency_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "event": self.event,
            "t_ms": self.t_ms,
            "node_id": self.node_id,
            "queue": self.queue,
            "platform_id": self.platform_id,
            "predicted_latency_ms": self.predicted_latency_ms,
            "actual_latency_ms": self.actual_latency_ms,
        }


@dataclass
class SubgraphQueue:
    id: str
    weight: int
    vruntime_ms: float = 0.0
    ready: list = field(default_factory=list)  # heap of (-priority, release, id, task)

    def push(self, task: TaskInstance) -> None:
        heapq.heappush(self.ready, (-task.priority, task.release_t_ms, task.id, task))

    def pop(self) -> TaskInstance:
        return heapq.heappop(self.ready)[-1]


@dataclass
class SchedState:
    dnn_queue: list[TaskInstance] = field(default_factory=list)
    runqueue: dict[str, SubgraphQueue] = field(default_factory=dict)
    clock_ms: float = 0.0
    wake_credit_ms: float = 3.0

    @classmethod
    def for_analysis(cls, analysis: GraphAnalysis, wake_credit_ms: float = 3.0) -> "SchedState":
        rq = {s.id: SubgraphQueue(s.id, nice_to_weight(s.nice)) for s in analysis.subgraphs}
        return cls(runqueue=rq, wake_credit_ms=wake_credit_ms)

    def account(self, subgraph_id: str, exec_ms: float) -> None:
        """Charge `exec_ms` of CPU time, scaled by 1024/weight, to a subgraph."""
        try:
            q = self.runqueue[subgraph_id]
        except KeyError:
            raise UnknownSubgraph(subgraph_id) from None
        q.vruntime_ms += exec_ms * NICE_0_WEIGHT / q.weight

    def _min_ready_vruntime(self) -> float | None:
        vals = [q.vruntime_ms for q in self.runqueue.values() if q.ready]
        return min(vals) if vals else None

    def enqueue_non_dnn(self, task: TaskInstance) -> None:
        q = self.runqueue.get(task.subgraph)
        if q is None:
            raise UnknownSubgraph(task.subgraph)
        if not q.ready:
            # a waking subgraph may not bank more than wake_credit_ms of lag
            floor = self._min_ready_vruntime()
            if floor is not None:
                q.vruntime_ms = max(q.vruntime_ms, floor - self.wake_credit_ms)
        q.push(task)

    def enqueue_dnn(self, task: TaskInstance) -> None:
        self.dnn_queue.append(task)

    def next_non_dnn(self) -> TaskInstance | None:
        """Pop the best task of the least-served subgraph, or None when idle."""
        best = None
        for sid in sorted(self.runqueue):
            q = self.runqueue[sid]
            if q.ready and (best is None or q.vruntime_ms < best.vruntime_ms):
                best = q
        return best.pop() if best is not None else None

    def non_dnn_pending(self) -> int:
        return sum(len(q.ready) for q in self.runqueue.values())


def choose_platform(latency_ms: Mapping[str, float], feasible: Sequence[str],
                    gpu_util: Mapping[str, float]) -> str | None:
    """Lowest predicted latency among feasible platforms; ties by lower GPU load, then id."""
    if not feasible:
        return None
    return min(feasible, key=lambda p: (latency_ms[p], gpu_util.get(p, 0.0), p))


@dataclass(frozen=True)
class DispatchDecision:
    task: TaskInstance
    platform_id: str | None
    predicted_latency_ms: float | None
    degraded: bool = False


class Predictor:
    """Wraps trained params for dispatch-time use."""

    def __init__(self, params, platforms, catalog: Mapping[str, ModelDescriptor]):
        from .predictor.features import featurize
        from .predictor.model import forward

        if params is None:
            raise PredictorUnavailable("no params")
        if params.normalizer is None:
            raise PredictorUnavailable("params carry no normalizer")
        self.params = params
        self.platforms = list(platforms)
        self.catalog = catalog
        self._featurize = featurize
        self._forward = forward

    def predict(self, model_id: str, batch: int, snapshots: Sequence[PlatformSnapshot]):
        fv = self._featurize(self.catalog[model_id], snapshots, batch, self.params.normalizer, self.platforms)
        return self._forward(self.params, fv)


def static_fastest(model_id: str, feasible: Sequence[str], oracle: LatencyOracleParams) -> str | None:
    """Feasible platform with the lowest nominal base latency."""
    if not feasible:
        return None
    return min(feasible, key=lambda p: (oracle.base(model_id, p), p))


def dispatch_dnn(task: TaskInstance, predictor: Predictor | None, snapshots: Mapping[str, PlatformSnapshot],
                 platforms: Mapping[str, PlatformState], oracle: LatencyOracleParams) -> DispatchDecision:
    """Decide where a DNN task runs; ``platform_id=None`` means it must wait.

    Without a predictor the static base-latency table decides (degraded mode).
    """
    feasible = [pid for pid in sorted(platforms) if platforms[pid].fits(task.memory_mb)]
    if predictor is None:
        return DispatchDecision(task, static_fastest(task.model_id, feasible, oracle), None, degraded=True)
    pred = predictor.predict(task.model_id, task.batch, [snapshots[p] for p in sorted(snapshots)])
    gpu = {p: s.gpu_util for p, s in snapshots.items()}
    choice = choose_platform(pred.latency_ms, feasible, gpu)
    return DispatchDecision(task, choice, pred.latency_ms[choice] if choice else None)


# --- policies -------------------------------------------------------------------

class Policy:
    """Interface the simulator drives; subclasses own their queues."""

    name = "base"

    def __init__(self, analysis: GraphAnalysis, oracle: LatencyOracleParams, predictor: Predictor | None = None):
        self.analysis = analysis
        self.oracle = oracle
        self.predictor = predictor

    def enqueue(self, task: TaskInstance) -> None:
        raise NotImplementedError

    def next_non_dnn(self) -> TaskInstance | None:
        raise NotImplementedError

    def pending_dnn(self) -> list[TaskInstance]:
        raise NotImplementedError

    def place(self, task: TaskInstance, snapshots, platforms) -> DispatchDecision:
        raise NotImplementedError

    def remove_dnn(self, task: TaskInstance) -> None:
        raise NotImplementedError

    def account(self, subgraph_id: str, exec_ms: float) -> None:
        pass

    def pending_non_dnn(self) -> int:
        raise NotImplementedError


class NeuroFlowPolicy(Policy):
    name = "neuroflow"

    def __init__(self, analysis, oracle, predictor=None, wake_credit_ms: float = 3.0):
        super().__init__(analysis, oracle, predictor)
        self.state = SchedState.for_analysis(analysis, wake_credit_ms)
        if predictor is None and any(n.kind is NodeKind.DNN for n in analysis.graph.nodes.values()):
            log.warning("predictor unavailable; DNN dispatch falls back to the static latency table")

    def enqueue(self, task):
        if task.kind is NodeKind.DNN:
            self.state.enqueue_dnn(task)
        else:
            self.state.enqueue_non_dnn(task)

    def next_non_dnn(self):
        return self.state.next_non_dnn()

    def pending_dnn(self):
        return list(self.state.dnn_queue)

    def remove_dnn(self, task):
        self.state.dnn_queue.remove(task)

    def place(self, task, snapshots, platforms):
        return dispatch_dnn(task, self.predictor, snapshots, platforms, self.oracle)

    def account(self, subgraph_id, exec_ms):
        self.state.account(subgraph_id, exec_ms)

    def pending_non_dnn(self):
        return self.state.non_dnn_pending()


class FifoPolicy(Policy):
    """Release-order CPU queue; each model pinned to its nominally fastest platform."""

    name = "fifo"

    def __init__(self, analysis, oracle, predictor=None):
        super().__init__(analysis, oracle, None)
        self.cpu: deque[TaskInstance] = deque()
        self.dnn: list[TaskInstance] = []

    def enqueue(self, task):
        (self.dnn if task.kind is NodeKind.DNN else self.cpu).append(task)

    def next_non_dnn(self):
        return self.cpu.popleft() if self.cpu else None

    def pending_dnn(self):
        return list(self.dnn)

    def remove_dnn(self, task):
        self.dnn.remove(task)

    def place(self, task, snapshots, platforms):
        home = static_fastest(task.model_id, sorted(platforms), self.oracle)
        ok = platforms[home].fits(task.memory_mb)
        return DispatchDecision(task, home if ok else None, None)

    def pending_non_dnn(self):
        return len(self.cpu)


class RoundRobinPolicy(Policy):
    """Cycles over subgraphs for CPU work and over platforms for DNN work."""

    name = "roundrobin"

    def __init__(self, analysis, oracle, predictor=None):
        super().__init__(analysis, oracle, None)
        self.queues: dict[str, deque] = {s.id: deque() for s in analysis.subgraphs}
        self.order = sorted(self.queues)
        self.cursor = 0
        self.dnn: list[TaskInstance] = []
        self.platform_cursor = 0

    def enqueue(self, task):
        if task.kind is NodeKind.DNN:
            self.dnn.append(task)
        else:
            self.queues[task.subgraph].append(task)

    def next_non_dnn(self):
        for i in range(len(self.order)):
            sid = self.order[(self.cursor + i) % len(self.order)]
            if self.queues[sid]:
                self.cursor = (self.cursor + i + 1) % len(self.order)
                return self.queues[sid].popleft()
        return None

    def pending_dnn(self):
        return list(self.dnn)

    def remove_dnn(self, task):
        self.dnn.remove(task)

    def place(self, task, snapshots, platforms):
        ids = sorted(platforms)
        for i in range(len(ids)):
            pid = ids[(self.platform_cursor + i) % len(ids)]
            if platforms[pid].fits(task.memory_mb):
                self.platform_cursor = (self.platform_cursor + i + 1) % len(ids)
                return DispatchDecision(task, pid, None)
        return DispatchDecision(task, None, None)

    def pending_non_dnn(self):
        return sum(len(q) for q in self.queues.values())


POLICIES = {p.name: p for p in (NeuroFlowPolicy, FifoPolicy, RoundRobinPolicy)}


def make_policy(name: str, analysis: GraphAnalysis, oracle: LatencyOracleParams,
                predictor: Predictor | None = None) -> Policy:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}") from None
    return cls(analysis, oracle, predictor)
