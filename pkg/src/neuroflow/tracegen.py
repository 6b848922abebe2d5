"""Labeled trace collection over every combination of concurrent DNN models.

Virtual time advances in fixed steps.  Each step activates one non-empty
subset of the scenario's models (cycling through all of them), draws a
batch and a memory-feasible platform for every active model, and records
the telemetry each model would see at dispatch.  The latency label is
taken `lag_ms` later under the same conditions.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations


from .errors import ConfigError
from .flowgraph import NodeKind
from .platforms import PlatformSnapshot, sample_telemetry, true_cpu_load
from .scenario import Scenario, background_at
from .traces import TraceRecord, TraceSet
from .workload import expected_latency, latency_ground_truth, sub_rng


@dataclass(frozen=True)
class _Job:
    id: str
    model_id: str
    batch: int
    memory_mb: float
    platform_id: str


def model_nodes(sc: Scenario) -> dict[str, str]:
    """First DNN node (by id) for each model referenced by the graph."""
    out: dict[str, str] = {}
    for nid, node in sc.graph.nodes.items():
        if node.kind is NodeKind.DNN and node.model_ref not in out:
            out[node.model_ref] = nid
    return dict(sorted(out.items()))


def concurrency_combinations(models: list[str]) -> list[tuple[str, ...]]:
    return [c for r in range(1, len(models) + 1) for c in combinations(sorted(models), r)]


def generate_traces(sc: Scenario, lag_ms: float | None = None) -> TraceSet:
    lag = sc.lag_ms if lag_ms is None else float(lag_ms)
    if lag < 0 or lag >= sc.step_ms:
        raise ConfigError("need 0 <= lag_ms < step_ms")
    by_model = model_nodes(sc)
    if not by_model:
        raise ConfigError("scenario has no DNN nodes")
    combos = concurrency_combinations(list(by_model))
    plats = sc.platform_map
    pids = list(plats)
    choices = {m: sc.batch_choices(n) for m, n in by_model.items()}
    rng = sub_rng(sc.seed, "traces")
    noise_rng = sub_rng(sc.oracle.seed if sc.oracle.seed is not None else sc.seed, "trace-noise")
    n_steps = int(sc.duration_ms // sc.step_ms)
    records: list[TraceRecord] = []

    for step in range(n_steps):
        t = step * sc.step_ms
        combo = combos[step % len(combos)]
        bg = {pid: background_at(sc.background_load, p.host, t, sc.seed) for pid, p in plats.items()}
        jobs: list[_Job] = []
        used = {pid: 0.0 for pid in pids}
        for mid in combo:
            model = sc.catalog[mid]
            values, probs = choices[mid]
            batch = int(rng.choice(values, p=probs))
            feasible = [pid for pid in pids if used[pid] + model.memory_mb <= plats[pid].memory_mb]
            if not feasible:
                continue
            pid = feasible[int(rng.integers(len(feasible)))]
            used[pid] += model.memory_mb
            jobs.append(_Job(f"s{step}-{mid}", mid, batch, model.memory_mb, pid))

        for job in jobs:
            others = {pid: [j for j in jobs if j.platform_id == pid and j is not job] for pid in pids}
            snaps: list[PlatformSnapshot] = [
                sample_telemetry(plats[pid], others[pid], t, sc.seed, background=bg[pid],
                                 model=sc.telemetry)
                for pid in pids
            ]
            model = sc.catalog[job.model_id]
            load = {pid: true_cpu_load(len(others[pid]), bg[pid]) for pid in pids}
            truth = {}
            for pid in pids:
                mem_others = sum(j.memory_mb for j in others[pid])
                if mem_others + model.memory_mb <= plats[pid].memory_mb:
                    truth[pid] = expected_latency(model, pid, job.batch, load[pid], sc.oracle)
            best = min(truth, key=lambda p: (truth[p], p))
            measured = latency_ground_truth(model, job.platform_id, job.batch, load[job.platform_id],
                                            sc.oracle, noise_rng)
            records.append(TraceRecord(
                t_ms=t,
                label_t_ms=t + lag,
                model_id=job.model_id,
                batch=job.batch,
                snapshots=tuple(snaps),
                platform_id=job.platform_id,
                measured_latency_ms=measured,
                best_platform=best,
            ))

    meta = {
        "scenario": sc.name,
        "seed": sc.seed,
        "lag_ms": lag,
        "step_ms": sc.step_ms,
        "duration_ms": sc.duration_ms,
        "models": list(by_model),
        "combination_count": len(combos),
    }
    used_models = {m: sc.catalog[m] for m in by_model}
    return TraceSet(records, used_models, list(plats.values()), meta)
