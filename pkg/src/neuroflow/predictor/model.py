"""Attention token mixer with a latency head and a platform classifier.

The model token is embedded and used as the single attention query over
the embedded platform tokens.  The attended vector is added back to the
model embedding, then every platform token is paired with it and passed
through a shared two-layer MLP.  From the last hidden layer two scalar
heads give, per platform, the log-latency and the classifier logit.
Latency is ``exp`` of the first head, so it is always positive.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import BudgetExceeded, ConfigError, DimensionMismatch
from .features import N_MODEL, N_PLATFORM, FeatureVector, Normalizer

PARAM_BUDGET_BYTES = 12_000
MAGIC = b"NFPR"
FORMAT_VERSION = 1
FLAG_F32_LE = 0
LOG_CLIP = 30.0

# serialization order
BLOCKS = ("Wm", "bm", "Wp", "bp", "E", "Wq", "Wk", "Wv", "W1", "b1", "W2", "b2", "wr", "br", "wc", "bc")


def block_shapes(n_platforms: int, d: int, h: int) -> dict[str, tuple[int, ...]]:
    return {
        "Wm": (N_MODEL, d), "bm": (d,),
        "Wp": (N_PLATFORM, d), "bp": (d,), "E": (n_platforms, d),
        "Wq": (d, d), "Wk": (d, d), "Wv": (d, d),
        "W1": (2 * d, h), "b1": (h,), "W2": (h, h), "b2": (h,),
        "wr": (h,), "br": (1,), "wc": (h,), "bc": (1,),
    }


@dataclass
class PredictorParams:
    platform_ids: tuple[str, ...]
    d: int
    h: int
    arrays: dict[str, np.ndarray]
    normalizer: Normalizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_platforms(self) -> int:
        return len(self.platform_ids)

    def n_values(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def astype(self, dtype) -> "PredictorParams":
        return PredictorParams(self.platform_ids, self.d, self.h,
                               {k: np.asarray(v, dtype=dtype) for k, v in self.arrays.items()},
                               self.normalizer, dict(self.meta))

    def copy(self) -> "PredictorParams":
        return PredictorParams(self.platform_ids, self.d, self.h,
                               {k: v.copy() for k, v in self.arrays.items()},
                               self.normalizer, dict(self.meta))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def init_params(platform_ids, d: int = 16, h: int = 24, seed: int = 0,
                out_bias: float = 0.0) -> PredictorParams:
    rng = np.random.default_rng(seed)
    shapes = block_shapes(len(platform_ids), d, h)
    arrays = {}
    for name, shape in shapes.items():
        if name == "E":
            arrays[name] = rng.normal(0.0, 0.5, size=shape)
        elif len(shape) == 2:
            arrays[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        else:
            arrays[name] = np.zeros(shape)
    arrays["wr"] = rng.normal(0.0, 0.1, size=shapes["wr"])
    arrays["wc"] = rng.normal(0.0, 0.1, size=shapes["wc"])
    arrays["br"] = np.array([out_bias], dtype=np.float64)
    return PredictorParams(tuple(platform_ids), d, h, arrays)


def check_dims(params: PredictorParams, xm: np.ndarray, xp: np.ndarray) -> None:
    if xm.shape[-1] != N_MODEL or xp.shape[-1] != N_PLATFORM or xp.shape[-2] != params.n_platforms:
        raise DimensionMismatch(
            f"expected model token {N_MODEL}, {params.n_platforms} platform tokens of {N_PLATFORM}; "
            f"got {xm.shape} and {xp.shape}"
        )


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def forward_batch(params: PredictorParams, xm: np.ndarray, xp: np.ndarray, cache: bool = False):
    """Batched forward pass.

    Returns ``(log_latency, logits, attention)`` with shapes (N, P), (N, P),
    (N, P); with ``cache=True`` a fourth element holds intermediates for
    `backward`.
    """
    check_dims(params, xm, xp)
    p = params.arrays
    d = params.d
    M = np.tanh(xm @ p["Wm"] + p["bm"])
    H = np.tanh(xp @ p["Wp"] + p["bp"] + p["E"])
    Q = M @ p["Wq"]
    K = H @ p["Wk"]
    V = H @ p["Wv"]
    S = np.einsum("nd,npd->np", Q, K) / np.sqrt(d)
    A = _softmax(S, axis=1)
    C = np.einsum("np,npd->nd", A, V)
    R = M + C
    U = np.concatenate([np.broadcast_to(R[:, None, :], H.shape), H], axis=-1)
    G1 = np.tanh(U @ p["W1"] + p["b1"])
    G2 = np.tanh(G1 @ p["W2"] + p["b2"])
    Z = G2 @ p["wr"] + p["br"]
    L = G2 @ p["wc"] + p["bc"]
    if not cache:
        return Z, L, A
    return Z, L, A, dict(xm=xm, xp=xp, M=M, H=H, Q=Q, K=K, V=V, A=A, U=U, G1=G1, G2=G2)


def loss_and_grads(params: PredictorParams, xm, xp, executed, best, y, lam: float = 1.0,
                   need_grads: bool = True):
    """Mean squared log-latency error on the executed platform plus `lam` times
    cross-entropy of the logits against the best platform.

    Returns ``(loss, parts, grads)`` where `parts` has the two loss terms.
    """
    n = len(y)
    Z, L, A, c = forward_batch(params, xm, xp, cache=True)
    rows = np.arange(n)
    err = Z[rows, executed] - np.log(y)
    mse = float(np.mean(err ** 2))
    Ls = L - L.max(axis=1, keepdims=True)
    logp = Ls - np.log(np.exp(Ls).sum(axis=1, keepdims=True))
    ce = float(-np.mean(logp[rows, best]))
    loss = mse + lam * ce
    parts = {"mse": mse, "ce": ce}
    if not need_grads:
        return loss, parts, None

    p = params.arrays
    d = params.d
    M, H, Q, K, V, U, G1, G2 = (c[k] for k in ("M", "H", "Q", "K", "V", "U", "G1", "G2"))
    g = {}
    dZ = np.zeros_like(Z)
    dZ[rows, executed] = 2.0 * err / n
    dL = np.exp(logp)
    dL[rows, best] -= 1.0
    dL *= lam / n

    g["wr"] = np.einsum("np,nph->h", dZ, G2)
    g["br"] = np.array([dZ.sum()])
    g["wc"] = np.einsum("np,nph->h", dL, G2)
    g["bc"] = np.array([dL.sum()])
    dG2 = dZ[..., None] * p["wr"] + dL[..., None] * p["wc"]
    dA2 = dG2 * (1.0 - G2 ** 2)
    g["W2"] = G1.reshape(-1, params.h).T @ dA2.reshape(-1, params.h)
    g["b2"] = dA2.sum(axis=(0, 1))
    dA1 = (dA2 @ p["W2"].T) * (1.0 - G1 ** 2)
    g["W1"] = U.reshape(-1, 2 * d).T @ dA1.reshape(-1, params.h)
    g["b1"] = dA1.sum(axis=(0, 1))
    dU = dA1 @ p["W1"].T
    dR = dU[..., :d].sum(axis=1)
    dH = dU[..., d:].copy()

    dM = dR.copy()
    dC = dR
    dAtt = np.einsum("nd,npd->np", dC, V)
    dV = c["A"][..., None] * dC[:, None, :]
    dS = c["A"] * (dAtt - (c["A"] * dAtt).sum(axis=1, keepdims=True))
    scale = 1.0 / np.sqrt(d)
    dQ = np.einsum("np,npd->nd", dS, K) * scale
    dK = dS[..., None] * Q[:, None, :] * scale
    g["Wq"] = M.T @ dQ
    dM += dQ @ p["Wq"].T
    Hf = H.reshape(-1, d)
    g["Wk"] = Hf.T @ dK.reshape(-1, d)
    g["Wv"] = Hf.T @ dV.reshape(-1, d)
    dH += dK @ p["Wk"].T + dV @ p["Wv"].T

    dAp = dH * (1.0 - H ** 2)
    g["Wp"] = c["xp"].reshape(-1, N_PLATFORM).T @ dAp.reshape(-1, d)
    g["bp"] = dAp.sum(axis=(0, 1))
    g["E"] = dAp.sum(axis=0)
    dAm = dM * (1.0 - M ** 2)
    g["Wm"] = c["xm"].T @ dAm
    g["bm"] = dAm.sum(axis=0)
    return loss, parts, g


def latency_from_log(z: np.ndarray) -> np.ndarray:
    return np.exp(np.clip(z, -LOG_CLIP, LOG_CLIP))


# --- serialization -----------------------------------------------------------

_HEADER = struct.Struct("<4sHBBI")  # magic, version, format flag, reserved, meta length


def to_bytes(params: PredictorParams) -> bytes:
    meta = {
        "platform_ids": list(params.platform_ids),
        "d": params.d,
        "h": params.h,
        "normalizer": params.normalizer.to_dict() if params.normalizer is not None else None,
        "meta": params.meta,
    }
    meta_b = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    blob = b"".join(np.ascontiguousarray(params.arrays[k], dtype="<f4").tobytes() for k in BLOCKS)
    return _HEADER.pack(MAGIC, FORMAT_VERSION, FLAG_F32_LE, 0, len(meta_b)) + meta_b + blob


def from_bytes(data: bytes) -> PredictorParams:
    if len(data) < _HEADER.size:
        raise ConfigError("params file truncated")
    magic, version, flag, _, mlen = _HEADER.unpack_from(data)
    if magic != MAGIC or version != FORMAT_VERSION or flag != FLAG_F32_LE:
        raise ConfigError("not a predictor params file or unsupported version")
    meta = json.loads(data[_HEADER.size:_HEADER.size + mlen])
    ids = tuple(meta["platform_ids"])
    shapes = block_shapes(len(ids), meta["d"], meta["h"])
    off = _HEADER.size + mlen
    arrays = {}
    for k in BLOCKS:
        count = int(np.prod(shapes[k], dtype=np.int64))
        arrays[k] = np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shapes[k]).astype(np.float32)
        off += 4 * count
    if off != len(data):
        raise ConfigError("params file has trailing bytes")
    norm = Normalizer.from_dict(meta["normalizer"]) if meta["normalizer"] else None
    return PredictorParams(ids, meta["d"], meta["h"], arrays, norm, meta.get("meta", {}))


def check_budget(params: PredictorParams, budget: int = PARAM_BUDGET_BYTES) -> int:
    size = len(to_bytes(params))
    if size > budget:
        raise BudgetExceeded(f"serialized params are {size} bytes, budget {budget}")
    return size


def save_params(params: PredictorParams, path) -> int:
    data = to_bytes(params)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def load_params(path) -> PredictorParams:
    try:
        with open(path, "rb") as fh:
            return from_bytes(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read params {path}: {exc}") from exc


@dataclass(frozen=True)
class Prediction:
    latency_ms: Mapping[str, float]
    platform_logits: Mapping[str, float]
    attention: Mapping[str, float] = field(default_factory=dict)

    def fastest(self, candidates=None) -> str:
        ids = sorted(candidates if candidates is not None else self.latency_ms)
        return min(ids, key=lambda p: (self.latency_ms[p], p))

    def top_logit(self) -> str:
        """Platform with the largest logit; ties go to the first id."""
        ids = sorted(self.platform_logits)
        best = ids[0]
        for p in ids[1:]:
            if self.platform_logits[p] > self.platform_logits[best]:
                best = p
        return best


def forward(params: PredictorParams, fv: FeatureVector) -> Prediction:
    """Single-sample prediction through the compiled kernel when available."""
    from . import kernels

    if tuple(fv.platform_ids) != params.platform_ids:
        raise DimensionMismatch(f"feature platforms {fv.platform_ids} != model platforms {params.platform_ids}")
    check_dims(params, fv.model_token, fv.platform_tokens)
    z, logits, att = kernels.forward_one(kernels.pack(params), fv.model_token, fv.platform_tokens)
    lat = latency_from_log(z)
    ids = params.platform_ids
    return Prediction(
        latency_ms={p: float(lat[i]) for i, p in enumerate(ids)},
        platform_logits={p: float(logits[i]) for i, p in enumerate(ids)},
        attention={p: float(att[i]) for i, p in enumerate(ids)},
    )
