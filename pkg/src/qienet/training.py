"""Mini-batch Adam training with early stopping, and k-fold cross-validation."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import model as qm
from .errors import ConfigError, InputError, StateError, TrainingError
from .metrics import MetricsReport, evaluate
from .pipeline.normalize import Normalizer, fit_normalizer
from .sample import Dataset

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 15
    fold_count: int = 5
    seed: int = 0
    val_every: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.fold_count < 2:
            raise ConfigError(f"fold_count must be >= 2, got {self.fold_count}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1 or self.val_every < 1:
            raise ConfigError("max_epochs and val_every must be >= 1")
        if not (self.learning_rate > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigError("invalid Adam hyperparameters")

    def to_dict(self) -> dict:
        return asdict(self)


def mse(pred, obs) -> float:
    pred = np.asarray(pred, dtype=np.float64).ravel()
    obs = np.asarray(obs, dtype=np.float64).ravel()
    if pred.size == 0 or pred.size != obs.size:
        raise InputError(f"mse needs equal nonzero lengths, got {pred.size} and {obs.size}")
    d = pred - obs
    return float(np.dot(d, d)) / d.size


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict
    v: dict

    @classmethod
    def zeros(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, t: int, cfg: TrainConfig):
    """Bias-corrected Adam update at step ``t`` (1-based). Returns ``(params, state)``."""
    if t <= 0:
        raise StateError(f"Adam step counter must be positive, got {t}")
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise StateError(f"{k}: parameter, gradient and moment shapes disagree")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v)


# -- fit ------------------------------------------------------------------------


@dataclass
class TrainReport:
    train_mse: list
    val_mse: list
    stop_epoch: int
    best_epoch: int
    best_val_mse: float
    checkpoint: qm.Checkpoint = field(repr=False)
    checkpoint_path: Optional[str] = None
    fold: Optional[int] = None
    wall_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "stop_epoch": self.stop_epoch,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse,
            "checkpoint_path": self.checkpoint_path,
            "fold": self.fold,
            "wall_seconds": self.wall_seconds,
        }


def _targets(ds: Dataset, what: str) -> np.ndarray:
    if len(ds) == 0:
        raise InputError(f"{what} set is empty")
    if not ds.has_targets:
        raise InputError(f"{what} set has samples without target GHI")
    return ds.target


def _fast_predict(X, A, cfg, params, scale, batch=1024) -> np.ndarray:
    net = qm.Network(cfg, params)
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], batch):
        out[s:s + batch] = net.forward(X[s:s + batch], A[s:s + batch])
    return np.maximum(out, 0.0) * scale


def fit(
    model_cfg: qm.ModelConfig,
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig = TrainConfig(),
    *,
    val_mse_fn: Optional[Callable[[int, dict], float]] = None,
    normalizer: Optional[Normalizer] = None,
) -> TrainReport:
    """Train on ``train`` and early-stop on validation MSE (W/m2 squared).

    ``val_mse_fn(epoch, params)`` replaces the validation evaluation; it exists
    so the stopping rule can be exercised on a prescribed loss curve.
    Returns the checkpoint of the best validation epoch (earliest on ties).
    """
    started = time.perf_counter()
    y_train = _targets(train, "training")
    y_val = _targets(val, "validation")
    norm = normalizer or fit_normalizer(train)
    scale = norm.target_max
    Xtr, Atr = qm.model_inputs(train, model_cfg, norm)
    Xva, Ava = qm.model_inputs(val, model_cfg, norm)
    ytr = y_train / scale

    params = qm.init_params(model_cfg)
    state = AdamState.zeros(params)
    rng = np.random.default_rng(cfg.seed)
    n = len(train)
    step = 0
    train_hist, val_hist = [], []
    best_val, best_epoch, best_params = np.inf, 0, None
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s:s + cfg.batch_size]
            loss, grads = qm.loss_and_grad(Xtr[idx], Atr[idx], ytr[idx], model_cfg, params)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss in epoch {epoch}", epoch=epoch)
            step += 1
            params, state = adam_step(params, grads, state, step, cfg)
            total += loss * idx.size
        train_hist.append(total / n * scale * scale)

        if epoch % cfg.val_every:
            val_hist.append(None)
        else:
            if val_mse_fn is not None:
                v = float(val_mse_fn(epoch, params))
            else:
                v = mse(_fast_predict(Xva, Ava, model_cfg, params, scale), y_val)
            if not np.isfinite(v):
                raise TrainingError(f"non-finite validation MSE in epoch {epoch}", epoch=epoch)
            val_hist.append(v)
            if v < best_val:
                best_val, best_epoch = v, epoch
                best_params = {k: p.copy() for k, p in params.items()}
        log.debug("epoch %d train %.4g val %s", epoch, train_hist[-1], val_hist[-1])
        if best_epoch and epoch - best_epoch >= cfg.patience:
            break

    if best_params is None:
        raise TrainingError("no validation evaluation happened; lower val_every", epoch=epoch)
    ckpt = qm.Checkpoint(
        model_cfg, best_params, norm,
        meta={"best_epoch": best_epoch, "train_config": cfg.to_dict()},
    )
    return TrainReport(
        train_mse=train_hist,
        val_mse=val_hist,
        stop_epoch=epoch,
        best_epoch=best_epoch,
        best_val_mse=float(best_val),
        checkpoint=ckpt,
        wall_seconds=time.perf_counter() - started,
    )


# -- cross-validation -----------------------------------------------------------


def kfold_split(n: int, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffle into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise InputError(f"need at least 2 folds, got {k}")
    if n < k:
        raise InputError(f"cannot split {n} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    folds = [np.sort(f) for f in np.array_split(perm, k)]
    out = []
    for i, val in enumerate(folds):
        train = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        out.append((train, val))
    return out


@dataclass
class FoldResult:
    k: int
    seed: int
    train_report: TrainReport
    metrics: MetricsReport

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "seed": self.seed,
            "train_report": self.train_report.to_dict(),
            "metrics": self.metrics.to_dict(),
        }


def cross_validate(
    model_cfg: qm.ModelConfig,
    dataset: Dataset,
    cfg: TrainConfig = TrainConfig(),
    test: Optional[Dataset] = None,
) -> list[FoldResult]:
    """Train one model per fold; metrics are computed on ``test`` when given, else on the held-out fold."""
    if len(dataset) == 0:
        raise InputError("cross-validation dataset is empty")
    results = []
    for i, (tr, va) in enumerate(kfold_split(len(dataset), cfg.fold_count, cfg.seed), start=1):
        fold_seed = cfg.seed + i
        fold_model = replace(model_cfg, seed=model_cfg.seed + i)
        fold_cfg = replace(cfg, seed=fold_seed)
        val = dataset.subset(va)
        report = fit(fold_model, dataset.subset(tr), val, fold_cfg)
        report.fold = i
        target = test if test is not None else val
        ck = report.checkpoint
        est = qm.predict(target, ck.config, ck.params, ck.normalizer)
        results.append(FoldResult(i, fold_seed, report, evaluate(est, target.target)))
        log.info("fold %d: stop %d best %d rmse %.3f", i, report.stop_epoch, report.best_epoch,
                 results[-1].metrics.rmse)
    return results
