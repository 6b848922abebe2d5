import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from neuroflow.errors import (
    BudgetExceeded,
    ConfigError,
    DimensionMismatch,
    MissingSnapshot,
    UnknownPlatform,
)
from neuroflow.platforms import PlatformSnapshot, default_platforms
from neuroflow.predictor import _fallback, kernels
from neuroflow.predictor.features import (
    N_MODEL,
    N_PLATFORM,
    FeatureVector,
    Normalizer,
    featurize,
    fit_normalizer,
    model_token_raw,
)
from neuroflow.predictor.model import (
    BLOCKS,
    PARAM_BUDGET_BYTES,
    check_budget,
    forward,
    forward_batch,
    from_bytes,
    init_params,
    load_params,
    save_params,
    to_bytes,
)
from neuroflow.workload import builtin_catalog

from . import oracles

PIDS = ("ipc_gpu", "sbc_dla", "sbc_gpu")


def snaps(t=0.0, cpu=0.2):
    return [PlatformSnapshot(p, t, cpu, 0.01, 1000.0, 0.3, 100.0) for p in PIDS]


def identity_norm():
    lo = np.zeros(N_MODEL + N_PLATFORM)
    return Normalizer(lo, lo + 1.0)


# --- normalizer ----------------------------------------------------------------

def test_single_record_maps_to_zero(small_traces):
    norm = fit_normalizer(small_traces.records[:1], small_traces.catalog, small_traces.platforms)
    fv = featurize(small_traces.catalog["det2d"], small_traces.records[0].snapshots, 3, norm,
                   small_traces.platforms)
    assert not fv.model_token.any() and not fv.platform_tokens.any()


def test_affine_endpoints_and_midpoint():
    n = Normalizer(np.full(N_MODEL + N_PLATFORM, 2.0), np.full(N_MODEL + N_PLATFORM, 4.0))
    x = np.zeros(N_MODEL)
    for raw, want in [(2.0, 0.0), (4.0, 1.0), (3.0, 0.5), (9.0, 1.0), (-1.0, 0.0)]:
        x[:] = raw
        assert np.all(n.model(x) == want)


def test_featurize_raw_flops_and_canonical_order():
    cat = builtin_catalog()
    assert model_token_raw(cat["det3d"], 1)[2] == 250.4e9
    plats = default_platforms()
    s = snaps()
    a = featurize(cat["det3d"], s, 2, identity_norm(), plats)
    b = featurize(cat["det3d"], s[::-1], 2, identity_norm(), plats)
    assert a.platform_ids == PIDS
    assert np.array_equal(a.platform_tokens, b.platform_tokens)
    assert np.array_equal(a.model_token, b.model_token)


def test_featurize_errors():
    cat, plats = builtin_catalog(), default_platforms()
    with pytest.raises(MissingSnapshot):
        featurize(cat["det2d"], snaps()[:2], 1, identity_norm(), plats)
    with pytest.raises(UnknownPlatform):
        featurize(cat["det2d"], snaps() + [PlatformSnapshot("tpu", 0, 0, 0, 0, 0, 0)], 1, identity_norm(), plats)


# --- forward -------------------------------------------------------------------

def random_params(seed, d=16, h=24, P=3, scale=1.0):
    p = init_params(PIDS[:P] if P <= 3 else [f"p{i}" for i in range(P)], d, h, seed=seed)
    rng = np.random.default_rng(seed + 100)
    for k in BLOCKS:
        p.arrays[k] = p.arrays[k] + scale * 0.3 * rng.normal(size=p.arrays[k].shape)
    return p


def fv_of(xm, xp):
    return FeatureVector(np.asarray(xm, float), np.asarray(xp, float), PIDS)


def test_zero_weights_give_equal_logits():
    p = init_params(PIDS)
    for k in BLOCKS:
        p.arrays[k] = np.zeros_like(p.arrays[k])
    pred = forward(p, fv_of(np.full(N_MODEL, 0.5), np.full((3, N_PLATFORM), 0.5)))
    assert len(set(pred.platform_logits.values())) == 1
    assert pred.top_logit() == "ipc_gpu"
    assert set(pred.latency_ms) == set(PIDS) and set(pred.platform_logits) == set(PIDS)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000),
       arrays(np.float64, N_MODEL, elements=st.floats(0, 1)),
       arrays(np.float64, (3, N_PLATFORM), elements=st.floats(0, 1)))
def test_attention_is_a_distribution_and_outputs_finite(seed, xm, xp):
    pred = forward(random_params(seed, scale=3.0), fv_of(xm, xp))
    att = np.array(list(pred.attention.values()))
    assert np.all(att >= 0) and abs(att.sum() - 1.0) <= 1e-6
    assert all(np.isfinite(v) and v > 0 for v in pred.latency_ms.values())
    assert all(np.isfinite(v) for v in pred.platform_logits.values())


def test_dimension_mismatch():
    p = random_params(0)
    with pytest.raises(DimensionMismatch):
        forward(p, FeatureVector(np.zeros(N_MODEL), np.zeros((2, N_PLATFORM)), PIDS[:2]))
    with pytest.raises(DimensionMismatch):
        forward(p, FeatureVector(np.zeros(N_MODEL + 1), np.zeros((3, N_PLATFORM)), PIDS))


@pytest.mark.parametrize("seed", range(5))
def test_compiled_and_fallback_kernels_agree(seed):
    p = random_params(seed)
    rng = np.random.default_rng(seed)
    xm, xp = rng.random(N_MODEL), rng.random((3, N_PLATFORM))
    ref = _fallback.forward_one(kernels.pack(p), xm, xp)
    got = kernels.forward_one(kernels.pack(p), xm, xp)
    for a, b in zip(ref, got):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    Z, L, A = forward_batch(p, xm[None], xp[None])
    np.testing.assert_allclose(ref[0], Z[0], rtol=1e-12)
    np.testing.assert_allclose(ref[1], L[0], rtol=1e-12)
    np.testing.assert_allclose(ref[2], A[0], rtol=1e-12)


def test_forward_speed_budget():
    p = random_params(0)
    fv = fv_of(np.full(N_MODEL, 0.3), np.full((3, N_PLATFORM), 0.6))
    forward(p, fv)
    n = 200
    t0 = time.perf_counter()
    for _ in range(n):
        forward(p, fv)
    per_call = (time.perf_counter() - t0) / n
    assert per_call <= 5e-3


# --- gradients -----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    assert oracles.grad_check(seed) <= 1e-4


# --- serialization -------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path, trained):
    p = trained.params
    path = tmp_path / "p.bin"
    size = save_params(p, path)
    back = load_params(path)
    assert size <= PARAM_BUDGET_BYTES
    assert back.platform_ids == p.platform_ids
    for k in BLOCKS:
        assert back.arrays[k].dtype == np.float32
        assert back.arrays[k].tobytes() == p.arrays[k].astype(np.float32).tobytes()
    assert to_bytes(back) == to_bytes(p)
    np.testing.assert_array_equal(back.normalizer.lo, p.normalizer.lo)


def test_budget_enforced():
    with pytest.raises(BudgetExceeded):
        check_budget(init_params(PIDS, d=64, h=64))
    assert check_budget(init_params(PIDS).astype(np.float32)) <= PARAM_BUDGET_BYTES


def test_corrupt_files_rejected(trained):
    data = to_bytes(trained.params)
    with pytest.raises(ConfigError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(ConfigError):
        from_bytes(data + b"\x00")
    with pytest.raises(ConfigError):
        from_bytes(data[:5])
