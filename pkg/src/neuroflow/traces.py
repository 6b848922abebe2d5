"""Labeled trace records and their JSONL/manifest file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigError, ZeroTarget
from .platforms import PlatformDescriptor, PlatformSnapshot
from .workload import ModelDescriptor

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TraceRecord:
    """One executed inference: telemetry at `t_ms`, latency labeled at `label_t_ms`.

    `best_platform` is the feasible platform with the lowest noise-free
    latency under the same load, used as the classifier target.
    """

    t_ms: float
    label_t_ms: float
    model_id: str
    batch: int
    snapshots: tuple[PlatformSnapshot, ...]
    platform_id: str
    measured_latency_ms: float
    best_platform: str

    def __post_init__(self):
        if not self.measured_latency_ms > 0:
            raise ZeroTarget(f"record at t={self.t_ms}: latency must be positive")

    def to_dict(self) -> dict:
        return {
            "t_ms": self.t_ms,
            "label_t_ms": self.label_t_ms,
            "model_id": self.model_id,
            "batch": self.batch,
            "platform_id": self.platform_id,
            "measured_latency_ms": self.measured_latency_ms,
            "best_platform": self.best_platform,
            "snapshots": [s.to_dict() for s in self.snapshots],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TraceRecord":
        return cls(
            t_ms=float(d["t_ms"]),
            label_t_ms=float(d["label_t_ms"]),
            model_id=d["model_id"],
            batch=int(d["batch"]),
            snapshots=tuple(PlatformSnapshot.from_dict(s) for s in d["snapshots"]),
            platform_id=d["platform_id"],
            measured_latency_ms=float(d["measured_latency_ms"]),
            best_platform=d["best_platform"],
        )


@dataclass
class TraceSet:
    """Records plus the descriptors needed to featurize them."""

    records: list[TraceRecord]
    catalog: dict[str, ModelDescriptor]
    platforms: list[PlatformDescriptor]
    meta: dict

    def subset(self, records: list[TraceRecord]) -> "TraceSet":
        return TraceSet(records, self.catalog, self.platforms, dict(self.meta))


def manifest_path(traces_path: str | Path) -> Path:
    p = Path(traces_path)
    return p.with_name(p.name + ".manifest.json")


def write_traces(ts: TraceSet, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in ts.records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    manifest = dict(ts.meta)
    manifest.update(
        schema_version=SCHEMA_VERSION,
        record_count=len(ts.records),
        catalog=[d.to_dict() for d in ts.catalog.values()],
        platforms=[p.to_dict() for p in ts.platforms],
    )
    mpath = manifest_path(path)
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return mpath


def read_traces(path: str | Path) -> TraceSet:
    path = Path(path)
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text())
        lines = path.read_text().splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read traces {path}: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported trace schema {manifest.get('schema_version')}")
    try:
        records = [TraceRecord.from_dict(json.loads(line)) for line in lines if line.strip()]
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed trace record: {exc}") from exc
    catalog = {d["id"]: ModelDescriptor.from_dict(d) for d in manifest.pop("catalog")}
    platforms = [PlatformDescriptor.from_dict(p) for p in manifest.pop("platforms")]
    return TraceSet(records, catalog, platforms, manifest)

