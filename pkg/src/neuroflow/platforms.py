"""Compute platforms, memory admission and synthetic telemetry."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, MemoryOvercommit
from .workload import sub_rng


class PlatformKind(str, Enum):
    CPU = "CPU"
    GPU = "GPU"
    DLA = "DLA"


@dataclass(frozen=True)
class PlatformDescriptor:
    id: str
    kind: PlatformKind
    fp32_tflops: float
    memory_mb: float
    host: str

    def __post_init__(self):
        object.__setattr__(self, "kind", PlatformKind(self.kind))
        if self.fp32_tflops <= 0 or self.memory_mb <= 0:
            raise ConfigError(f"platform {self.id}: fp32_tflops and memory_mb must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "PlatformDescriptor":
        extra = set(data) - {"id", "kind", "fp32_tflops", "memory_mb", "host"}
        if extra:
            raise ConfigError(f"unknown platform fields: {sorted(extra)}")
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def default_platforms() -> list[PlatformDescriptor]:
    """IPC with a desktop GPU, SBC with an embedded GPU and a DLA.

    The DLA has no FP32 rating on the reference rig; 1.0 is a placeholder.
    """
    return [
        PlatformDescriptor("ipc_gpu", PlatformKind.GPU, 10.07, 8192.0, "ipc"),
        PlatformDescriptor("sbc_gpu", PlatformKind.GPU, 5.3, 12288.0, "sbc"),
        PlatformDescriptor("sbc_dla", PlatformKind.DLA, 1.0, 6144.0, "sbc"),
    ]


@dataclass(frozen=True)
class PlatformSnapshot:
    platform_id: str
    t_ms: float
    cpu_util: float
    cpu_iowait: float
    context_switches_per_s: float
    gpu_util: float
    mem_used_mb: float
    queue_depth: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "PlatformSnapshot":
        return cls(**data)


def saturation(n: float) -> float:
    """Share of capacity used by `n` tasks; each task halves the remaining headroom."""
    return 1.0 - 2.0 ** (-n)


def true_cpu_load(n_tasks: int, background: float = 0.0) -> float:
    """Noise-free CPU utilisation, also the load the latency oracle sees."""
    return 1.0 - (1.0 - background) * 2.0 ** (-n_tasks)


@dataclass(frozen=True)
class TelemetryModel:
    jitter: float = 0.01
    iowait_scale: float = 0.15
    ctx_base: float = 200.0
    ctx_per_task: float = 3000.0
    ctx_background: float = 5000.0


def sample_telemetry(platform: PlatformDescriptor, active_tasks: Sequence, t_ms: float, seed: int,
                     background: float = 0.0, queue_depth: int = 0,
                     model: TelemetryModel = TelemetryModel()) -> PlatformSnapshot:
    """Telemetry of one platform at `t_ms`.

    Deterministic in (task multiset, seed, t_ms, background): the jitter
    stream is keyed on those values, so replays reproduce identical
    snapshots.  Tasks need ``memory_mb`` and may carry ``platform_id``.
    """
    for t in active_tasks:
        pid = getattr(t, "platform_id", None)
        if pid is not None and pid != platform.id:
            raise ValueError(f"task {getattr(t, 'id', t)} is assigned to {pid}, not {platform.id}")
    mem = float(sum(t.memory_mb for t in active_tasks))
    if mem > platform.memory_mb:
        raise MemoryOvercommit(f"{platform.id}: {mem} MB used of {platform.memory_mb} MB")
    n = len(active_tasks)
    cpu = true_cpu_load(n, background)
    gpu = saturation(n) if platform.kind is not PlatformKind.CPU else 0.0
    iowait = model.iowait_scale * saturation(n) + 0.05 * background
    ctx = model.ctx_base * (n > 0 or background > 0) + model.ctx_per_task * n + model.ctx_background * background
    if model.jitter > 0:
        rng = sub_rng(seed, "telemetry", platform.id, int(round(t_ms * 1000)))
        j = rng.normal(0.0, model.jitter, size=4)
        cpu = cpu + j[0] if n or background else cpu
        gpu = gpu + j[1] if n else gpu
        iowait = iowait + j[2] * 0.5 if n or background else iowait
        ctx = ctx * (1.0 + j[3])
    return PlatformSnapshot(
        platform_id=platform.id,
        t_ms=float(t_ms),
        cpu_util=float(np.clip(cpu, 0.0, 1.0)),
        cpu_iowait=float(np.clip(iowait, 0.0, 1.0)),
        context_switches_per_s=float(max(ctx, 0.0)),
        gpu_util=float(np.clip(gpu, 0.0, 1.0)),
        mem_used_mb=mem,
        queue_depth=int(queue_depth),
    )


@dataclass(frozen=True)
class Rejection:
    platform_id: str
    task_id: str
    needed_mb: float
    free_mb: float


@dataclass
class PlatformState:
    """Mutable occupancy of one platform, owned by the simulation loop."""

    descriptor: PlatformDescriptor
    active: dict[str, object] = field(default_factory=dict)

    @property
    def mem_used_mb(self) -> float:
        return float(sum(t.memory_mb for t in self.active.values()))

    @property
    def free_mb(self) -> float:
        return self.descriptor.memory_mb - self.mem_used_mb

    def fits(self, memory_mb: float) -> bool:
        return self.mem_used_mb + memory_mb <= self.descriptor.memory_mb

    def admit(self, task) -> Rejection | None:
        """Record `task` as running here, or return a `Rejection` if it does not fit."""
        if not self.fits(task.memory_mb):
            return Rejection(self.descriptor.id, task.id, task.memory_mb, self.free_mb)
        self.active[task.id] = task
        return None

    def complete(self, task_id: str):
        return self.active.pop(task_id)


def platforms_by_id(platforms: Iterable[PlatformDescriptor]) -> dict[str, PlatformDescriptor]:
    out = {}
    for p in platforms:
        if p.id in out:
            raise ConfigError(f"duplicate platform id {p.id}")
        out[p.id] = p
    return dict(sorted(out.items()))
