"""DNN model descriptors and the synthetic ground-truth latency oracle."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, NonPositiveDimension, UnknownPair


@dataclass(frozen=True)
class ModelDescriptor:
    id: str
    weight_file_mb: float
    trainable_params: int
    non_trainable_params: int
    conv_layers: int
    linear_layers: int
    conv_flops: float
    linear_flops: float
    total_flops: float
    batch_alpha: float = 0.0
    tracking_style: bool = False
    memory_mb: float = 0.0

    def __post_init__(self):
        counts = (self.trainable_params, self.non_trainable_params, self.conv_layers, self.linear_layers)
        if min(counts) < 0:
            raise ConfigError(f"{self.id}: negative count")
        if self.conv_flops < 0 or self.linear_flops < 0:
            raise ConfigError(f"{self.id}: negative flops")
        if self.total_flops < self.conv_flops + self.linear_flops:
            raise ConfigError(f"{self.id}: total_flops below conv+linear")
        if self.batch_alpha < 0:
            raise ConfigError(f"{self.id}: batch_alpha must be >= 0")

    @property
    def total_params(self) -> int:
        return self.trainable_params + self.non_trainable_params

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "ModelDescriptor":
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ConfigError(f"unknown descriptor fields: {sorted(extra)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def split_flops(total_flops: float, conv_layers: int, linear_layers: int,
                dense_fraction: float = 1.0) -> tuple[float, float]:
    """Divide `dense_fraction` of the total between conv and linear by layer count.

    Used for catalog entries whose per-layer-type FLOPs are unknown.
    """
    layers = conv_layers + linear_layers
    if layers == 0:
        return 0.0, 0.0
    dense = total_flops * dense_fraction
    conv = dense * conv_layers / layers
    return conv, dense - conv


# Anatomy from the reference rig; avg inference times become the IPC GPU base latency.
_REFERENCE_MODELS = [
    # id, weight MB, trainable, non-trainable, conv, linear, total FLOPs, RAM MiB, avg ms
    ("det3d", 10.5, 4_860_000, 0, 19, 1, 250.4e9, 2763, 50.4),
    ("det2d", 75.6, 36_910_000, 0, 92, 0, 52.257e9, 2311, 11.1),
    ("trajectory", 323.3, 3_780_000, 24_450_000, 62, 28, 130.3e9, 2791, 31.0),
    ("traversable", 13.4, 1_080_000, 0, 87, 12, 18.67e9, 1707, 8.5),
]

# Synthetic: batch growth per model; det3d carries the tracking head.
_BATCH_ALPHA = {"det3d": 0.06, "det2d": 0.25, "trajectory": 0.12, "traversable": 0.18}
_TRACKING = {"det3d"}

# Synthetic slowdown of each platform relative to the IPC GPU.
_PLATFORM_SCALE = {
    "det3d": {"ipc_gpu": 1.0, "sbc_gpu": 1.9, "sbc_dla": 1.25},
    "det2d": {"ipc_gpu": 1.0, "sbc_gpu": 1.9, "sbc_dla": 2.6},
    "trajectory": {"ipc_gpu": 1.0, "sbc_gpu": 1.9, "sbc_dla": 3.4},
    "traversable": {"ipc_gpu": 1.0, "sbc_gpu": 1.9, "sbc_dla": 1.2},
}

AVG_INFERENCE_MS = {m[0]: m[8] for m in _REFERENCE_MODELS}


def builtin_catalog() -> dict[str, ModelDescriptor]:
    """The four pipeline models. The conv/linear FLOPs split is synthetic."""
    out = {}
    for mid, wmb, tr, ntr, conv, lin, total, ram, _ in _REFERENCE_MODELS:
        cf, lf = split_flops(total, conv, lin)
        out[mid] = ModelDescriptor(
            id=mid,
            weight_file_mb=wmb,
            trainable_params=tr,
            non_trainable_params=ntr,
            conv_layers=conv,
            linear_layers=lin,
            conv_flops=cf,
            linear_flops=lf,
            total_flops=total,
            batch_alpha=_BATCH_ALPHA[mid],
            tracking_style=mid in _TRACKING,
            memory_mb=float(ram),
        )
    return out


def default_base_ms() -> dict[str, dict[str, float]]:
    return {
        m: {p: round(AVG_INFERENCE_MS[m] * s, 3) for p, s in scales.items()}
        for m, scales in _PLATFORM_SCALE.items()
    }


def catalog_to_json(catalog: Mapping[str, ModelDescriptor]) -> str:
    return json.dumps([d.to_dict() for d in catalog.values()], indent=2)


def catalog_from_json(text: str) -> dict[str, ModelDescriptor]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad catalog JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise ConfigError("catalog must be a JSON array")
    out = {}
    for item in raw:
        d = ModelDescriptor.from_dict(item)
        out[d.id] = d
    return out


def load_catalog(path: str | Path) -> dict[str, ModelDescriptor]:
    try:
        return catalog_from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read catalog {path}: {exc}") from exc


def flops_breakdown(layers: Sequence[Mapping], overhead: float = 0.0) -> tuple[float, float, float]:
    """Sum FLOPs over conv and linear layer specs.

    Conv layers are ``{"type": "conv", "cin", "k", "cout", "hout", "wout"}``
    and count ``2*cin*k*k*cout*hout*wout``; linear layers are
    ``{"type": "linear", "m", "n"}`` and count ``2*m*n``.  `overhead` is
    added to the total for ops that are not listed.
    """
    conv = linear = 0.0
    for layer in layers:
        kind = layer["type"]
        if kind == "conv":
            dims = [layer[k] for k in ("cin", "k", "cout", "hout", "wout")]
        elif kind == "linear":
            dims = [layer["m"], layer["n"]]
        else:
            raise ConfigError(f"unknown layer type {kind!r}")
        if min(dims) <= 0:
            raise NonPositiveDimension(f"{kind} layer with dims {dims}")
        flops = 2.0 * float(np.prod(dims, dtype=np.float64))
        if kind == "conv":
            conv += flops
        else:
            linear += flops
    return conv, linear, conv + linear + overhead


@dataclass
class LatencyOracleParams:
    base_ms: dict[str, dict[str, float]] = field(default_factory=default_base_ms)
    cpu_beta: float = 0.8
    noise_sigma_pct: float = 5.0
    seed: int = 0

    def __post_init__(self):
        for m, row in self.base_ms.items():
            for p, v in row.items():
                if v <= 0:
                    raise ConfigError(f"base_ms[{m}][{p}] must be positive")
        if self.noise_sigma_pct < 0:
            raise ConfigError("noise_sigma_pct must be >= 0")

    def base(self, model_id: str, platform_id: str) -> float:
        try:
            return self.base_ms[model_id][platform_id]
        except KeyError:
            raise UnknownPair((model_id, platform_id)) from None


def batch_factor(model: ModelDescriptor, batch: int) -> float:
    extra = batch - 1
    if model.tracking_style:
        return 1.0 + model.batch_alpha * extra * extra
    return 1.0 + model.batch_alpha * extra


def expected_latency(model: ModelDescriptor, platform_id: str, batch: int, cpu_load: float,
                     oracle: LatencyOracleParams) -> float:
    """Noise-free latency in milliseconds."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    base = oracle.base(model.id, platform_id)
    return base * batch_factor(model, batch) * (1.0 + oracle.cpu_beta * cpu_load)


def latency_ground_truth(model: ModelDescriptor, platform_id: str, batch: int, cpu_load: float,
                         oracle: LatencyOracleParams, rng: np.random.Generator | None) -> float:
    """Sample one measured latency; ``rng=None`` or zero sigma gives the expected value."""
    mean = expected_latency(model, platform_id, batch, cpu_load, oracle)
    if rng is None or oracle.noise_sigma_pct == 0:
        return mean
    eps = rng.normal(0.0, oracle.noise_sigma_pct / 100.0)
    # keep strictly positive even for absurd sigmas
    return mean * max(1.0 + eps, 1e-3)


def stable_key(*parts) -> list[int]:
    """Deterministic integer key for seeding sub-generators from strings and ints."""
    out = []
    for p in parts:
        if isinstance(p, str):
            out.append(zlib.crc32(p.encode()))
        else:
            out.append(int(p) & 0xFFFFFFFF)
    return out


def sub_rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *stable_key(*parts)])
