"""Training machinery: masked MSE, AdamW, plateau LR decay, epoch loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .blstm import (
    BlstmConfig,
    pad_batch,
    predict_future,
    split_pretext,
)
from .tae import TaeConfig, tae_forward


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.1
    plateau_patience: int = 3
    min_lr: float = 1e-6
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not self.lr > self.min_lr > 0:
            raise ValueError("need lr > min_lr > 0")
        if self.plateau_patience < 1:
            raise ValueError("patience must be >= 1")

    def to_dict(self):
        return {
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "plateau_factor": self.plateau_factor,
            "plateau_patience": self.plateau_patience,
            "min_lr": self.min_lr,
            "seed": self.seed,
            "standardize": self.standardize,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over valid (point, feature) entries only.

    mask broadcasts against the prediction: (B, T) masks whole points,
    an all-ones mask reduces to a plain MSE.
    """
    m = np.asarray(mask, dtype=float)
    if m.ndim == pred.ndim - 1:
        m = m[..., None]
    m = np.broadcast_to(m, pred.shape)
    total = m.sum()
    if total == 0:
        raise ValueError("mask has no valid entries")
    diff = pred - Tensor(np.asarray(target, dtype=float))
    return (diff * diff * Tensor(m)).sum() * (1.0 / total)


class AdamW:
    """Decoupled-weight-decay Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.lr = cfg.lr
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        cfg = self.cfg
        self.t += 1
        b1t = 1.0 - cfg.beta1**self.t
        b2t = 1.0 - cfg.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
            self.m[name] = cfg.beta1 * self.m[name] + (1.0 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1.0 - cfg.beta2) * g * g
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.data = (
                p.data
                - self.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
                - self.lr * cfg.weight_decay * p.data
            )

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


class PlateauScheduler:
    """ReduceLROnPlateau: lr *= factor after `patience` non-improving epochs."""

    def __init__(self, optimizer: AdamW, factor: float, patience: int, min_lr: float):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def step(self, val_loss: float) -> bool:
        if val_loss < self.best - 1e-8:
            self.best = val_loss
            self.stale = 0
            return False
        self.stale += 1
        if self.stale > self.patience:
            self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
            self.stale = 0
            return True
        return False


def _standardize(seqs, mean, std):
    return [(s - mean) / std for s in seqs]


def _blstm_batch_loss(chunk, params, cfg: BlstmConfig):
    inputs, targets = zip(*(split_pretext(s, cfg.horizon) for s in chunk))
    x, mask = pad_batch(list(inputs))
    pred = predict_future(x, mask, params, cfg)
    target = np.stack(targets)
    return masked_mse(pred, target, np.ones(pred.shape[:2]))


def _tae_batch_loss(chunk, params, cfg: TaeConfig, rng=None):
    x, mask = pad_batch(list(chunk), pad_value=cfg.sentinel)
    pred = tae_forward(x, mask, params, cfg, rng=rng)
    return masked_mse(pred, x, mask)


def _evaluate(kind, seqs, params, model_cfg, batch_size):
    losses, weights = [], []
    for start in range(0, len(seqs), batch_size):
        chunk = seqs[start : start + batch_size]
        if kind == "blstm":
            loss = _blstm_batch_loss(chunk, params, model_cfg)
        else:
            loss = _tae_batch_loss(chunk, params, model_cfg, rng=None)
        losses.append(float(loss.data))
        weights.append(len(chunk))
    return float(np.average(losses, weights=weights))


def train_model(
    kind: str,
    train_seqs: list[np.ndarray],
    val_seqs: list[np.ndarray],
    model_cfg,
    train_cfg: TrainConfig,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
    log=None,
):
    """Train a BLSTM predictor or TAE; returns (params, history, best_params).

    history is a list of per-epoch dicts (train loss, val loss, lr). The best
    validation checkpoint is retained alongside the final parameters. Training
    aborts on a non-finite loss, returning the last finite state.
    """
    if kind not in ("blstm", "tae"):
        raise ValueError(f"unknown model kind '{kind}'")
    if not train_seqs or not val_seqs:
        raise ValueError("train and validation sets must be non-empty")
    rng = np.random.default_rng(train_cfg.seed)
    if train_cfg.standardize:
        if mean is None:
            stacked = np.concatenate(train_seqs, axis=0)
            mean, std = stacked.mean(axis=0), stacked.std(axis=0)
            std = np.where(std < 1e-12, 1.0, std)
        train_seqs = _standardize(train_seqs, mean, std)
        val_seqs = _standardize(val_seqs, mean, std)

    if kind == "blstm":
        from .blstm import init_blstm_params

        params = init_blstm_params(model_cfg, rng)
    else:
        from .tae import init_tae_params

        params = init_tae_params(model_cfg, rng)

    opt = AdamW(params, train_cfg)
    sched = PlateauScheduler(
        opt, train_cfg.plateau_factor, train_cfg.plateau_patience, train_cfg.min_lr
    )
    history = []
    best_val = np.inf
    best_params = {k: p.data.copy() for k, p in params.items()}
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(train_seqs))
        epoch_losses, epoch_weights = [], []
        for start in range(0, len(order), train_cfg.batch_size):
            chunk = [train_seqs[i] for i in order[start : start + train_cfg.batch_size]]
            opt.zero_grad()
            if kind == "blstm":
                loss = _blstm_batch_loss(chunk, params, model_cfg)
            else:
                loss = _tae_batch_loss(chunk, params, model_cfg, rng=rng)
            if not np.isfinite(loss.data):
                return params, history, best_params
            loss.backward()
            opt.step()
            epoch_losses.append(float(loss.data))
            epoch_weights.append(len(chunk))
        train_loss = float(np.average(epoch_losses, weights=epoch_weights))
        val_loss = _evaluate(kind, val_seqs, params, model_cfg, train_cfg.batch_size)
        history.append({"epoch": epoch, "train": train_loss, "val": val_loss, "lr": opt.lr})
        if log:
            log(f"epoch {epoch}: train {train_loss:.6f} val {val_loss:.6f} lr {opt.lr:g}")
        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: p.data.copy() for k, p in params.items()}
        sched.step(val_loss)
    return params, history, best_params
