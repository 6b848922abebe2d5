"""Feature extraction: one model token plus one token per platform."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..errors import EmptyDataset, MissingSnapshot, UnknownPlatform
from ..platforms import PlatformDescriptor, PlatformSnapshot
from ..traces import TraceRecord
from ..workload import ModelDescriptor

MODEL_FEATURES = ("conv_flops", "linear_flops", "total_flops", "conv_layers",
                  "linear_layers", "total_params", "batch")
PLATFORM_FEATURES = ("cpu_util", "cpu_iowait", "context_switches", "gpu_util",
                     "mem_used_frac", "queue_depth", "fp32_tflops")
N_MODEL = len(MODEL_FEATURES)
N_PLATFORM = len(PLATFORM_FEATURES)


def model_token_raw(model: ModelDescriptor, batch: int) -> np.ndarray:
    return np.array(
        [model.conv_flops, model.linear_flops, model.total_flops, model.conv_layers,
         model.linear_layers, model.total_params, batch],
        dtype=np.float64,
    )


def platform_token_raw(snap: PlatformSnapshot, platform: PlatformDescriptor) -> np.ndarray:
    return np.array(
        [snap.cpu_util, snap.cpu_iowait, snap.context_switches_per_s, snap.gpu_util,
         snap.mem_used_mb / platform.memory_mb, snap.queue_depth, platform.fp32_tflops],
        dtype=np.float64,
    )


def order_snapshots(snapshots: Sequence[PlatformSnapshot], platform_ids: Sequence[str]) -> list[PlatformSnapshot]:
    """Arrange snapshots in the canonical platform order."""
    by_id = {}
    for s in snapshots:
        if s.platform_id not in platform_ids:
            raise UnknownPlatform(s.platform_id)
        by_id[s.platform_id] = s
    missing = [p for p in platform_ids if p not in by_id]
    if missing:
        raise MissingSnapshot(", ".join(missing))
    return [by_id[p] for p in platform_ids]


@dataclass
class Normalizer:
    """Min-max scaling fitted on training data; values outside the range clamp to [0, 1].

    `lo`/`hi` hold the model-token dimensions first, then the platform-token
    dimensions of each platform in canonical order, flattened.
    """

    lo: np.ndarray
    hi: np.ndarray

    def _scale(self, x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (x - lo) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def model(self, x: np.ndarray) -> np.ndarray:
        return self._scale(x, self.lo[:N_MODEL], self.hi[:N_MODEL])

    def platform(self, x: np.ndarray) -> np.ndarray:
        shape = (-1, N_PLATFORM)
        return self._scale(x, self.lo[N_MODEL:].reshape(shape), self.hi[N_MODEL:].reshape(shape))

    def to_dict(self) -> dict:
        return {"lo": [float(v) for v in self.lo], "hi": [float(v) for v in self.hi]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Normalizer":
        return cls(np.asarray(d["lo"], dtype=np.float64), np.asarray(d["hi"], dtype=np.float64))


@dataclass
class FeatureVector:
    model_token: np.ndarray        # (N_MODEL,)
    platform_tokens: np.ndarray    # (P, N_PLATFORM)
    platform_ids: tuple[str, ...]


@dataclass
class RawDataset:
    """Un-normalized arrays for a list of records, in canonical platform order."""

    xm: np.ndarray          # (N, N_MODEL)
    xp: np.ndarray          # (N, P, N_PLATFORM)
    executed: np.ndarray    # (N,) platform index
    best: np.ndarray        # (N,) platform index
    y: np.ndarray           # (N,) measured latency, ms
    platform_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx: np.ndarray) -> "RawDataset":
        return RawDataset(self.xm[idx], self.xp[idx], self.executed[idx], self.best[idx],
                          self.y[idx], self.platform_ids)


def raw_dataset(records: Sequence[TraceRecord], catalog: Mapping[str, ModelDescriptor],
                platforms: Sequence[PlatformDescriptor]) -> RawDataset:
    if not records:
        raise EmptyDataset("no trace records")
    plats = sorted(platforms, key=lambda p: p.id)
    ids = tuple(p.id for p in plats)
    index = {p: i for i, p in enumerate(ids)}
    n, P = len(records), len(plats)
    xm = np.empty((n, N_MODEL))
    xp = np.empty((n, P, N_PLATFORM))
    executed = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.int64)
    y = np.empty(n)
    for i, r in enumerate(records):
        xm[i] = model_token_raw(catalog[r.model_id], r.batch)
        for j, s in enumerate(order_snapshots(r.snapshots, ids)):
            xp[i, j] = platform_token_raw(s, plats[j])
        if r.platform_id not in index:
            raise UnknownPlatform(r.platform_id)
        executed[i] = index[r.platform_id]
        best[i] = index[r.best_platform]
        y[i] = r.measured_latency_ms
    return RawDataset(xm, xp, executed, best, y, ids)


def fit_normalizer(data: RawDataset | Sequence[TraceRecord], catalog=None, platforms=None) -> Normalizer:
    """Per-dimension min/max over the given (training) records."""
    if not isinstance(data, RawDataset):
        if not data:
            raise EmptyDataset("cannot fit a normalizer on zero records")
        data = raw_dataset(data, catalog, platforms)
    if len(data) == 0:
        raise EmptyDataset("cannot fit a normalizer on zero records")
    lo = np.concatenate([data.xm.min(axis=0), data.xp.min(axis=0).ravel()])
    hi = np.concatenate([data.xm.max(axis=0), data.xp.max(axis=0).ravel()])
    return Normalizer(lo, hi)


def normalize(data: RawDataset, norm: Normalizer) -> tuple[np.ndarray, np.ndarray]:
    return norm.model(data.xm), norm.platform(data.xp)


def featurize(model: ModelDescriptor, snapshots: Sequence[PlatformSnapshot], batch: int,
              norm: Normalizer, platforms: Sequence[PlatformDescriptor]) -> FeatureVector:
    """Normalized tokens for one prediction; platform tokens sorted by platform id."""
    plats = sorted(platforms, key=lambda p: p.id)
    ids = tuple(p.id for p in plats)
    ordered = order_snapshots(snapshots, ids)
    xp = np.stack([platform_token_raw(s, p) for s, p in zip(ordered, plats)])
    return FeatureVector(norm.model(model_token_raw(model, batch)), norm.platform(xp), ids)
