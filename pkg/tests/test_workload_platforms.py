import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neuroflow.errors import ConfigError, MemoryOvercommit, NonPositiveDimension, UnknownPair
from neuroflow.platforms import (
    PlatformDescriptor,
    PlatformKind,
    PlatformState,
    default_platforms,
    sample_telemetry,
    saturation,
    true_cpu_load,
)
from neuroflow.workload import (
    AVG_INFERENCE_MS,
    LatencyOracleParams,
    ModelDescriptor,
    batch_factor,
    builtin_catalog,
    catalog_from_json,
    catalog_to_json,
    default_base_ms,
    flops_breakdown,
    latency_ground_truth,
    sub_rng,
)


def desc(**kw):
    base = dict(id="m", weight_file_mb=1.0, trainable_params=10, non_trainable_params=0, conv_layers=1,
                linear_layers=1, conv_flops=1.0, linear_flops=1.0, total_flops=2.0)
    base.update(kw)
    return ModelDescriptor(**base)


def oracle_for(model_id, base=10.0, noise=0.0, beta=0.8):
    return LatencyOracleParams(base_ms={model_id: {"p": base}}, cpu_beta=beta, noise_sigma_pct=noise)


# --- FLOPs -----------------------------------------------------------------

def test_flops_empty():
    assert flops_breakdown([]) == (0, 0, 0)


def test_flops_linear_and_conv():
    assert flops_breakdown([{"type": "linear", "m": 3, "n": 4}])[1] == 24
    conv = {"type": "conv", "cin": 1, "k": 1, "cout": 1, "hout": 2, "wout": 2}
    assert flops_breakdown([conv])[0] == 8
    assert flops_breakdown([conv], overhead=5)[2] == 13


def test_flops_rejects_zero_dims():
    with pytest.raises(NonPositiveDimension):
        flops_breakdown([{"type": "linear", "m": 0, "n": 4}])


# --- catalog -----------------------------------------------------------------

def test_catalog_values():
    cat = builtin_catalog()
    d3 = cat["det3d"]
    assert d3.trainable_params == 4_860_000
    assert (d3.conv_layers, d3.linear_layers) == (19, 1)
    assert d3.total_flops == pytest.approx(250.4e9)
    assert d3.tracking_style
    assert cat["trajectory"].total_params == 3_780_000 + 24_450_000
    for m in cat.values():
        assert m.conv_flops + m.linear_flops <= m.total_flops * (1 + 1e-12)


def test_catalog_json_round_trip_is_exact():
    cat = builtin_catalog()
    assert catalog_from_json(catalog_to_json(cat)) == cat


def test_base_latency_calibrated_to_reference():
    base = default_base_ms()
    for m, ms in AVG_INFERENCE_MS.items():
        assert base[m]["ipc_gpu"] == ms
    assert base["det3d"]["ipc_gpu"] == 50.4


def test_descriptor_invariants():
    with pytest.raises(ConfigError):
        desc(total_flops=1.0)
    with pytest.raises(ConfigError):
        desc(batch_alpha=-0.1)
    with pytest.raises(ConfigError):
        ModelDescriptor.from_dict({**desc().to_dict(), "bogus": 1})


# --- latency oracle ----------------------------------------------------------

def test_latency_identity_case():
    m = desc()
    assert latency_ground_truth(m, "p", 1, 0.0, oracle_for("m"), None) == 10.0


def test_latency_tracking_hand_case():
    m = desc(batch_alpha=0.1, tracking_style=True)
    assert latency_ground_truth(m, "p", 4, 0.0, oracle_for("m"), None) == pytest.approx(19.0)


def test_unknown_pair():
    with pytest.raises(UnknownPair):
        latency_ground_truth(desc(id="q"), "p", 1, 0.0, oracle_for("m"), None)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 2), st.integers(1, 12), st.floats(0, 1), st.booleans())
def test_latency_monotone_in_batch_and_load(alpha, batch, load, tracking):
    m = desc(batch_alpha=alpha, tracking_style=tracking)
    o = oracle_for("m")
    lat = latency_ground_truth(m, "p", batch, load, o, None)
    assert latency_ground_truth(m, "p", batch + 1, load, o, None) >= lat
    assert latency_ground_truth(m, "p", batch, min(1.0, load + 0.1), o, None) >= lat
    assert lat > 0


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 2), st.integers(3, 12))
def test_tracking_exceeds_plain_from_batch_3(alpha, batch):
    o = oracle_for("m")
    t = latency_ground_truth(desc(batch_alpha=alpha, tracking_style=True), "p", batch, 0.0, o, None)
    n = latency_ground_truth(desc(batch_alpha=alpha), "p", batch, 0.0, o, None)
    assert t > n


def test_latency_noise_is_seeded():
    m, o = desc(), oracle_for("m", noise=5.0)
    a = [latency_ground_truth(m, "p", 2, 0.3, o, sub_rng(7, "x")) for _ in range(1)]
    r1, r2 = sub_rng(7, "x"), sub_rng(7, "x")
    seq1 = [latency_ground_truth(m, "p", 2, 0.3, o, r1) for _ in range(50)]
    seq2 = [latency_ground_truth(m, "p", 2, 0.3, o, r2) for _ in range(50)]
    assert seq1 == seq2 and a[0] == seq1[0]
    rel = np.array(seq1) / (10.0 * 1.0 * (1 + 0.8 * 0.3) * batch_factor(m, 2)) - 1
    assert 0.01 < rel.std() < 0.1


# --- telemetry and admission -------------------------------------------------

class T:
    def __init__(self, id, memory_mb, platform_id=None):
        self.id, self.memory_mb, self.platform_id = id, memory_mb, platform_id


GPU = PlatformDescriptor("gpu", PlatformKind.GPU, 5.0, 1000.0, "h")


def test_idle_platform_reads_zero():
    from neuroflow.platforms import TelemetryModel
    s = sample_telemetry(GPU, [], 0.0, 0, model=TelemetryModel(jitter=0.0))
    assert (s.cpu_util, s.gpu_util, s.mem_used_mb) == (0.0, 0.0, 0.0)


def test_overcommit_raises():
    with pytest.raises(MemoryOvercommit):
        sample_telemetry(GPU, [T("a", 600.0), T("b", 401.0)], 0.0, 0)


def test_two_tasks_saturation():
    from neuroflow.platforms import TelemetryModel
    s = sample_telemetry(GPU, [T("a", 1.0), T("b", 1.0)], 0.0, 0, model=TelemetryModel(jitter=0.0))
    assert s.cpu_util == pytest.approx(0.75)
    assert saturation(2) == 0.75 and true_cpu_load(2, 0.0) == 0.75


def test_telemetry_is_a_pure_function():
    tasks = [T("a", 10.0)]
    assert sample_telemetry(GPU, tasks, 123.0, 5, background=0.3) == sample_telemetry(GPU, tasks, 123.0, 5,
                                                                                       background=0.3)


def test_admission_examples():
    st_ = PlatformState(GPU)
    assert st_.admit(T("a", 1.0)) is None
    full = PlatformState(GPU)
    assert full.admit(T("big", 1000.0)) is None
    assert full.admit(T("x", 1.0)) is not None
    half = PlatformState(GPU)
    assert half.admit(T("a", 500.0)) is None
    assert half.admit(T("b", 500.0)) is None
    rej = half.admit(T("c", 500.0))
    assert rej is not None and rej.free_mb == 0.0
    half.complete("a")
    assert half.admit(T("c", 500.0)) is None


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(1, 800)), max_size=40))
def test_admission_never_exceeds_capacity(ops):
    state = PlatformState(GPU)
    for i, (add, mem) in enumerate(ops):
        if add or not state.active:
            state.admit(T(f"t{i}", mem))
        else:
            state.complete(sorted(state.active)[0])
        assert state.mem_used_mb <= GPU.memory_mb


def test_default_platforms():
    ps = default_platforms()
    assert [p.id for p in ps] == ["ipc_gpu", "sbc_gpu", "sbc_dla"]
    assert ps[0].fp32_tflops == 10.07 and ps[1].fp32_tflops == 5.3
    assert math.isclose(sum(p.memory_mb for p in ps), 8192 + 12288 + 6144)
