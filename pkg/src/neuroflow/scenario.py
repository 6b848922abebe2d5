"""Scenario configuration, JSON loading and the built-in presets.

Presets are synthetic: the batch distributions and load profiles only
encode the qualitative contrast between driving situations (urban traffic
is dense and loaded, highways want low batches and tight periods,
intersections spike in batch size).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError
from .flowgraph import FlowGraph, NodeKind, ProgramNode, build_graph, graph_from_dict, graph_to_dict
from .platforms import PlatformDescriptor, TelemetryModel, default_platforms, platforms_by_id
from .workload import (
    LatencyOracleParams,
    ModelDescriptor,
    builtin_catalog,
    catalog_from_json,
    default_base_ms,
    sub_rng,
)


@dataclass
class Scenario:
    name: str
    graph: FlowGraph
    catalog: dict[str, ModelDescriptor] = field(default_factory=builtin_catalog)
    platforms: list[PlatformDescriptor] = field(default_factory=default_platforms)
    duration_ms: float = 10_000.0
    batch_distribution: dict[str, dict[int, float]] = field(default_factory=dict)
    background_load: dict = field(default_factory=lambda: {"kind": "constant", "level": 0.0})
    oracle: LatencyOracleParams = field(default_factory=LatencyOracleParams)
    seed: int = 0
    control_node: str | None = None
    nice: dict[str, int] = field(default_factory=dict)
    cpu_cores: int = 1
    dnn_cpu_fraction: float = 0.2
    lag_ms: float = 1000.0
    step_ms: float = 2500.0
    staleness_ms: float = 1000.0
    telemetry_period_ms: float = 250.0
    telemetry: TelemetryModel = field(default_factory=TelemetryModel)
    params_path: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.duration_ms <= 0:
            raise ConfigError("duration_ms must be positive")
        if self.cpu_cores < 1:
            raise ConfigError("cpu_cores must be >= 1")
        plats = platforms_by_id(self.platforms)
        for node in self.graph.nodes.values():
            if node.kind is NodeKind.DNN:
                if node.model_ref not in self.catalog:
                    raise ConfigError(f"node {node.id}: unknown model {node.model_ref!r}")
                for pid in plats:
                    self.oracle.base(node.model_ref, pid)
        for nid, dist in self.batch_distribution.items():
            if nid not in self.graph.nodes:
                raise ConfigError(f"batch distribution for unknown node {nid!r}")
            if any(int(b) < 1 for b in dist) or any(p < 0 for p in dist.values()):
                raise ConfigError(f"{nid}: batches must be >= 1 and probabilities >= 0")
            if not math.isclose(sum(dist.values()), 1.0, abs_tol=1e-9):
                raise ConfigError(f"{nid}: batch probabilities sum to {sum(dist.values())}")
        if self.control_node is not None and self.control_node not in self.graph.nodes:
            raise ConfigError(f"unknown control node {self.control_node!r}")
        if self.lag_ms < 0 or self.step_ms <= self.lag_ms:
            raise ConfigError("need 0 <= lag_ms < step_ms")

    @property
    def platform_map(self) -> dict[str, PlatformDescriptor]:
        return platforms_by_id(self.platforms)

    def model_of(self, node_id: str) -> ModelDescriptor:
        return self.catalog[self.graph.nodes[node_id].model_ref]

    def batch_choices(self, node_id: str) -> tuple[np.ndarray, np.ndarray]:
        dist = self.batch_distribution.get(node_id) or {1: 1.0}
        items = sorted((int(b), float(p)) for b, p in dist.items())
        return np.array([b for b, _ in items]), np.array([p for _, p in items])

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "graph": graph_to_dict(self.graph),
            "catalog": [d.to_dict() for d in self.catalog.values()],
            "platforms": [p.to_dict() for p in self.platforms],
            "duration_ms": self.duration_ms,
            "batch_distribution": {n: {str(b): p for b, p in d.items()} for n, d in self.batch_distribution.items()},
            "background_load": self.background_load,
            "oracle": {"base_ms": self.oracle.base_ms, "cpu_beta": self.oracle.cpu_beta,
                       "noise_sigma_pct": self.oracle.noise_sigma_pct, "seed": self.oracle.seed},
            "seed": self.seed,
            "control_node": self.control_node,
            "nice": self.nice,
            "cpu_cores": self.cpu_cores,
            "dnn_cpu_fraction": self.dnn_cpu_fraction,
            "lag_ms": self.lag_ms,
            "step_ms": self.step_ms,
            "staleness_ms": self.staleness_ms,
            "telemetry_period_ms": self.telemetry_period_ms,
            "telemetry": {f.name: getattr(self.telemetry, f.name) for f in fields(TelemetryModel)},
            "params_path": self.params_path,
        }


def background_at(profile: Mapping, host: str, t_ms: float, seed: int) -> float:
    """Background CPU load of `host` at `t_ms`; a pure function of its arguments."""
    kind = profile.get("kind", "constant")
    if kind == "constant":
        level = profile.get("level", 0.0)
        if isinstance(level, Mapping):
            level = level.get(host, 0.0)
        return float(level)
    if kind == "sine":
        mean, amp, period = profile["mean"], profile["amplitude"], profile["period_ms"]
        phase = (sub_rng(seed, "bg-phase", host).random() * 2 * math.pi) if profile.get("random_phase", True) else 0.0
        return float(np.clip(mean + amp * math.sin(2 * math.pi * t_ms / period + phase), 0.0, 0.99))
    if kind == "steps":
        step = profile.get("step_ms", 2500.0)
        k = int(t_ms // step)
        u = sub_rng(seed, "bg-steps", host, k).random()
        return float(profile.get("low", 0.0) + (profile.get("high", 0.9) - profile.get("low", 0.0)) * u)
    raise ConfigError(f"unknown background profile kind {kind!r}")


# --- the reference pipeline ---------------------------------------------------

def pipeline_graph(extra_load: bool = False) -> FlowGraph:
    """Perception -> prediction -> planning -> control, with side consumers.

    ``extra_load`` adds CPU-heavy mapping/recording flows that compete with
    the control path.
    """
    N = ProgramNode
    nodes = [
        N("camera", period_ms=100.0, cost_hint_ms=2.0),
        N("lidar", period_ms=100.0, cost_hint_ms=3.0),
        N("gnss", period_ms=50.0, cost_hint_ms=0.5),
        N("det2d", NodeKind.DNN, "det2d"),
        N("det3d", NodeKind.DNN, "det3d"),
        N("traversable", NodeKind.DNN, "traversable"),
        N("fusion", cost_hint_ms=4.0),
        N("tracking", cost_hint_ms=3.0),
        N("trajectory", NodeKind.DNN, "trajectory"),
        N("localization", cost_hint_ms=3.0),
        N("planner", cost_hint_ms=8.0),
        N("control", cost_hint_ms=2.0),
        N("visualization", cost_hint_ms=6.0),
        N("logger", cost_hint_ms=4.0),
    ]
    edges = [
        ("camera", "det2d"), ("camera", "traversable"), ("lidar", "det3d"),
        ("det2d", "fusion"), ("det3d", "fusion"), ("fusion", "tracking"),
        ("tracking", "trajectory"), ("gnss", "localization"),
        ("trajectory", "planner"), ("traversable", "planner"), ("localization", "planner"),
        ("planner", "control"),
        ("fusion", "visualization"), ("traversable", "visualization"),
        ("localization", "logger"), ("tracking", "logger"),
    ]
    if extra_load:
        nodes += [
            N("pointcloud_map", period_ms=100.0, cost_hint_ms=25.0),
            N("map_update", cost_hint_ms=15.0),
            N("recorder", period_ms=50.0, cost_hint_ms=10.0),
            N("compress", cost_hint_ms=8.0),
        ]
        edges += [("pointcloud_map", "map_update"), ("lidar", "map_update"),
                  ("recorder", "compress"), ("camera", "compress")]
    return build_graph(nodes, edges)


_BATCHES = {
    "urban": {"det3d": {2: 0.2, 3: 0.3, 4: 0.3, 5: 0.2}, "det2d": {1: 0.3, 2: 0.4, 3: 0.3},
              "trajectory": {2: 0.3, 4: 0.4, 6: 0.3}, "traversable": {1: 1.0}},
    "highway": {"det3d": {1: 0.6, 2: 0.4}, "det2d": {1: 1.0},
                "trajectory": {1: 0.5, 2: 0.5}, "traversable": {1: 1.0}},
    "intersection": {"det3d": {1: 0.4, 3: 0.2, 6: 0.4}, "det2d": {1: 0.5, 4: 0.5},
                     "trajectory": {1: 0.3, 8: 0.7}, "traversable": {1: 0.7, 2: 0.3}},
    "traces": {"det3d": {1: 0.25, 2: 0.25, 3: 0.2, 4: 0.15, 6: 0.15},
               "det2d": {1: 0.3, 2: 0.3, 3: 0.2, 4: 0.2},
               "trajectory": {1: 0.2, 2: 0.2, 4: 0.3, 6: 0.15, 8: 0.15},
               "traversable": {1: 0.6, 2: 0.4}},
}

_LOADS = {
    "urban": {"kind": "sine", "mean": 0.55, "amplitude": 0.25, "period_ms": 7000.0},
    "highway": {"kind": "constant", "level": 0.15},
    "intersection": {"kind": "steps", "low": 0.1, "high": 0.7, "step_ms": 1500.0},
    "traces": {"kind": "steps", "low": 0.0, "high": 0.9, "step_ms": 2500.0},
}

PRESETS = ("urban", "highway", "intersection", "overload", "traces", "fairness")


def preset(name: str, seed: int = 0, **overrides: Any) -> Scenario:
    """Build one of the named presets; keyword overrides replace fields."""
    if name == "fairness":
        sc = fairness_scenario(seed=seed)
    elif name in ("urban", "highway", "intersection", "traces", "overload"):
        base = "urban" if name == "overload" else name
        graph = pipeline_graph(extra_load=name == "overload")
        batches = {nid: dict(_BATCHES[base][node.model_ref])
                   for nid, node in graph.nodes.items() if node.kind is NodeKind.DNN}
        sc = Scenario(
            name=name,
            graph=graph,
            duration_ms=86_400_000.0 if name == "traces" else 20_000.0,
            batch_distribution=batches,
            background_load=copy.deepcopy(_LOADS[base]),
            oracle=LatencyOracleParams(base_ms=default_base_ms(), seed=seed),
            seed=seed,
            control_node="control",
            cpu_cores=1 if name == "overload" else 2,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return replace_fields(sc, **overrides) if overrides else sc


def fairness_scenario(nice_a: int = 0, nice_b: int = 0, duration_ms: float = 10_000.0,
                      cost_ms: float = 5.0, seed: int = 0) -> Scenario:
    """Two independent always-backlogged CPU flows on a single core."""
    nodes = [ProgramNode("a", period_ms=cost_ms / 2, cost_hint_ms=cost_ms),
             ProgramNode("b", period_ms=cost_ms / 2, cost_hint_ms=cost_ms)]
    return Scenario(
        name="fairness",
        graph=build_graph(nodes, []),
        duration_ms=duration_ms,
        seed=seed,
        nice={"a": nice_a, "b": nice_b},
        cpu_cores=1,
    )


def replace_fields(sc: Scenario, **kw: Any) -> Scenario:
    data = {f.name: getattr(sc, f.name) for f in fields(Scenario)}
    for k, v in kw.items():
        if k not in data:
            raise ConfigError(f"unknown scenario field {k!r}")
        data[k] = v
    return Scenario(**data)


_SCENARIO_KEYS = {f.name for f in fields(Scenario)} | {"preset"}


def scenario_from_dict(raw: Mapping, base_dir: Path | None = None) -> Scenario:
    """Parse a scenario object.

    ``"preset": name`` starts from a built-in preset; other keys override it.
    ``graph`` and ``catalog`` may be inline or a path relative to `base_dir`.
    """
    extra = set(raw) - _SCENARIO_KEYS
    if extra:
        raise ConfigError(f"unknown scenario keys: {sorted(extra)}")
    raw = dict(raw)
    base_dir = base_dir or Path(".")
    seed = int(raw.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed must be >= 0")
    kw: dict[str, Any] = {}
    if "graph" in raw:
        g = raw["graph"]
        if isinstance(g, str):
            g = _read_json(base_dir / g)
        kw["graph"] = graph_from_dict(g)
    if "catalog" in raw and raw["catalog"] is not None:
        c = raw["catalog"]
        if isinstance(c, str):
            kw["catalog"] = catalog_from_json(_read_text(base_dir / c))
        else:
            kw["catalog"] = {d["id"]: ModelDescriptor.from_dict(d) for d in c}
    if "platforms" in raw and raw["platforms"] is not None:
        kw["platforms"] = [PlatformDescriptor.from_dict(p) for p in raw["platforms"]]
    if "batch_distribution" in raw:
        kw["batch_distribution"] = {n: {int(b): float(p) for b, p in d.items()}
                                    for n, d in raw["batch_distribution"].items()}
    if "oracle" in raw:
        o = dict(raw["oracle"])
        o.setdefault("seed", seed)
        try:
            kw["oracle"] = LatencyOracleParams(**o)
        except TypeError as exc:
            raise ConfigError(f"bad oracle params: {exc}") from exc
    if "telemetry" in raw:
        try:
            kw["telemetry"] = TelemetryModel(**raw["telemetry"])
        except TypeError as exc:
            raise ConfigError(f"bad telemetry params: {exc}") from exc
    for key in ("name", "duration_ms", "background_load", "control_node", "nice", "cpu_cores",
                "dnn_cpu_fraction", "lag_ms", "step_ms", "staleness_ms", "telemetry_period_ms",
                "params_path"):
        if key in raw:
            kw[key] = raw[key]
    if kw.get("params_path"):
        kw["params_path"] = str((base_dir / kw["params_path"]).resolve())
    try:
        if "preset" in raw:
            return preset(raw["preset"], seed=seed, **kw)
        kw["seed"] = seed
        if "graph" not in kw:
            raise ConfigError("scenario needs a graph or a preset")
        kw.setdefault("name", "custom")
        return Scenario(**kw)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc


def _read_json(path: Path):
    try:
        return json.loads(_read_text(path))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(_read_json(path), path.parent)


def apply_overrides(sc: Scenario, pairs: list[str]) -> Scenario:
    """Apply ``key=value`` overrides; values parse as JSON when possible."""
    kw: dict[str, Any] = {}
    oracle = None
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must be key=value: {pair!r}")
        key, val = pair.split("=", 1)
        try:
            value = json.loads(val)
        except json.JSONDecodeError:
            value = val
        if key.startswith("oracle."):
            oracle = oracle or copy.deepcopy(sc.oracle)
            attr = key.split(".", 1)[1]
            if not hasattr(oracle, attr):
                raise ConfigError(f"unknown oracle field {attr!r}")
            setattr(oracle, attr, value)
        else:
            kw[key] = value
    if oracle is not None:
        kw["oracle"] = oracle
    return replace_fields(sc, **kw) if kw else sc
