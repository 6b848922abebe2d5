"""Mini-batch Adam training of the token mixer on labeled traces."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DegenerateLabels, EmptyDataset
from ..traces import TraceSet
from .features import Normalizer, RawDataset, fit_normalizer, normalize, raw_dataset
from .model import BLOCKS, PARAM_BUDGET_BYTES, PredictorParams, check_budget, init_params, loss_and_grads

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-3
    epochs: int = 40
    batch_size: int = 256
    seed: int = 0
    val_fraction: float = 0.2
    lam: float = 1.0
    d: int = 16
    h: int = 24
    min_records: int = 100
    budget_bytes: int = PARAM_BUDGET_BYTES
    final_lr_fraction: float = 0.05


@dataclass
class TrainResult:
    params: PredictorParams
    normalizer: Normalizer
    log: list[dict]
    train_idx: np.ndarray
    val_idx: np.ndarray
    config: TrainConfig = field(default_factory=TrainConfig)


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in BLOCKS:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _check_dataset(data: RawDataset, cfg: TrainConfig) -> None:
    if len(data) == 0:
        raise EmptyDataset("no training records")
    if len(data) < cfg.min_records:
        raise EmptyDataset(f"{len(data)} records, need at least {cfg.min_records}")
    if len(np.unique(data.best)) < 2:
        raise DegenerateLabels("all records share one best platform")


def train(ts: TraceSet, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit normalizer and network on a seeded train split of `ts`.

    Aborts with `BudgetExceeded` if the serialized parameters would not fit
    the size budget.  The returned params are float32 and carry the
    normalizer.
    """
    cfg = cfg or TrainConfig()
    if not ts.records:
        raise EmptyDataset("no training records")
    data = raw_dataset(ts.records, ts.catalog, ts.platforms)
    _check_dataset(data, cfg)
    tr_idx, va_idx = split_indices(len(data), cfg.val_fraction, cfg.seed)
    tr = data.take(tr_idx)
    norm = fit_normalizer(tr)
    xm, xp = normalize(tr, norm)
    if len(va_idx):
        va = data.take(va_idx)
        vxm, vxp = normalize(va, norm)

    params = init_params(data.platform_ids, cfg.d, cfg.h, seed=cfg.seed,
                         out_bias=float(np.mean(np.log(tr.y))))
    params.normalizer = norm
    check_budget(params.astype(np.float32), cfg.budget_bytes)

    def full_loss():
        loss, parts, _ = loss_and_grads(params, xm, xp, tr.executed, tr.best, tr.y, cfg.lam, need_grads=False)
        entry = {"train_loss": loss, "train_mse": parts["mse"], "train_ce": parts["ce"]}
        if len(va_idx):
            vl, vparts, _ = loss_and_grads(params, vxm, vxp, va.executed, va.best, va.y, cfg.lam,
                                           need_grads=False)
            entry.update(val_loss=vl, val_mse=vparts["mse"], val_ce=vparts["ce"])
        return entry

    history = [{"epoch": 0, **full_loss()}]
    opt = _Adam(params.arrays, cfg.lr)
    rng = np.random.default_rng([cfg.seed, 11])
    n = len(tr)
    steps_per_epoch = max(1, int(np.ceil(n / cfg.batch_size)))
    total_steps = cfg.epochs * steps_per_epoch
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        for s in range(steps_per_epoch):
            b = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            _, _, grads = loss_and_grads(params, xm[b], xp[b], tr.executed[b], tr.best[b], tr.y[b], cfg.lam)
            frac = step / max(1, total_steps - 1)
            lr = cfg.lr * (cfg.final_lr_fraction + (1 - cfg.final_lr_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
            opt.step(params.arrays, grads, lr)
            step += 1
        entry = {"epoch": epoch, **full_loss()}
        history.append(entry)
        log.debug("epoch %d train %.5f", epoch, entry["train_loss"])

    final = params.astype(np.float32)
    final.normalizer = norm
    final.meta = {"config": asdict(cfg), "n_train": int(len(tr_idx)), "n_val": int(len(va_idx))}
    check_budget(final, cfg.budget_bytes)
    history = [{k: (round(v, 12) if isinstance(v, float) else v) for k, v in e.items()} for e in history]
    return TrainResult(final, norm, history, tr_idx, va_idx, cfg)
