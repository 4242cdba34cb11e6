"""Masked-MSE training loop: adaptive-moment updates, gradient clipping,
validation-based model selection with early stopping.

The loop is deliberately deterministic: samples are visited in fixed
chronological order (no shuffling), gradients are reduced in a fixed
tensor order, and no RNG is consumed after parameter initialization, so
one seed reproduces parameters bitwise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import (GraphArtifacts, ModelConfig, ModelParams, forward,
                    init_params)
from .windows import Sample, WindowConfig, enumerate_samples


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    learning_rate: float = 0.001
    max_epochs: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    seed: int = 0
    optimizer: str = "adam"   # "adam" | "sgd" (sgd exists for gradient audits)
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")


@dataclass
class TrainReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    wall_time_s: float = 0.0
    aborted: bool = False

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch] if self.best_epoch >= 0 else float("nan")

    def as_dict(self) -> dict:
        return {
            "train_losses": self.train_losses,
            "val_losses": self.val_losses,
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "wall_time_s": self.wall_time_s,
            "aborted": self.aborted,
        }


def masked_mse(pred: np.ndarray, actual: np.ndarray, mask: np.ndarray) -> float:
    """Mean squared error over masked cells; 0 when nothing is masked."""
    denom = mask.sum()
    if denom == 0:
        return 0.0
    return float((mask * (pred - actual) ** 2).sum() / denom)


class DelayModelTrainer:
    """Bundles parameters, config, and graph constants behind the small
    protocol train_epoch needs: named_tensors() and batch_loss()."""

    def __init__(self, params: ModelParams, cfg: ModelConfig, art: GraphArtifacts):
        self.params = params
        self.cfg = cfg
        self.art = art

    def named_tensors(self):
        return self.params.named_tensors()

    def batch_loss(self, batch: list[Sample]):
        """Pooled masked MSE over the batch as a differentiable scalar.

        Returns (loss, masked_count); loss is None for fully-masked
        batches, which contribute nothing and trigger no update.
        """
        count = float(sum(s.mask.sum() for s in batch))
        if count == 0.0:
            return None, 0.0
        inv = Tensor(1.0 / count)
        total = None
        for sample in batch:
            pred = forward(sample, self.params, self.cfg, self.art)
            diff = ad.sub(pred, Tensor(sample.y))
            sse = ad.tsum(ad.mul(ad.mul(diff, diff), Tensor(sample.mask)))
            term = ad.mul(sse, inv)
            total = term if total is None else ad.add(total, term)
        if not np.isfinite(total.data):
            raise NonFiniteLossError(f"batch loss is {total.data}")
        return total, count


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def _apply_update(model, grads: dict, cfg: TrainConfig, state: OptimizerState):
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    scale = cfg.clip_norm / norm if (cfg.clip_norm > 0 and norm > cfg.clip_norm) else 1.0

    state.step += 1
    for name, tensor in model.named_tensors():
        g = grads[name] * scale
        if cfg.optimizer == "sgd":
            tensor.data = tensor.data - cfg.learning_rate * g
            continue
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - cfg.beta1 ** state.step)
        v_hat = v / (1 - cfg.beta2 ** state.step)
        tensor.data = tensor.data - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def train_epoch(model, samples: list[Sample], cfg: TrainConfig,
                state: OptimizerState) -> float:
    """One pass in fixed order, batches of batch_size; mean batch loss."""
    if not samples:
        raise ValueError("no training samples")
    losses = []
    for start in range(0, len(samples), cfg.batch_size):
        batch = samples[start:start + cfg.batch_size]
        loss, count = model.batch_loss(batch)
        if loss is None:
            losses.append(0.0)
            continue
        for _, t in model.named_tensors():
            t.grad = None
        grads = _generic_backward(loss, model)
        _apply_update(model, grads, cfg, state)
        losses.append(float(loss.data))
    return float(np.mean(losses))


def _generic_backward(loss: Tensor, model) -> dict:
    ad.backward(loss)
    grads = {}
    for name, t in model.named_tensors():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.isfinite(g).all():
            raise NonFiniteLossError(f"non-finite gradient in {name}")
        grads[name] = g
    return grads


def validation_loss(model, samples: list[Sample]) -> float:
    """Pooled masked MSE over a sample list (no gradients)."""
    sse = 0.0
    count = 0.0
    for sample in samples:
        loss, c = model.batch_loss([sample])
        if loss is not None:
            sse += float(loss.data) * c
            count += c
    return sse / count if count else 0.0


def fit(cube, splits, graph_art: GraphArtifacts, model_cfg: ModelConfig,
        window_cfg: WindowConfig, train_cfg: TrainConfig,
        progress=None) -> tuple[ModelParams, TrainReport]:
    """Train with per-epoch validation; keep the best-validation epoch and
    stop after `patience` epochs without improvement. A non-finite loss
    aborts training with the best parameters so far retained."""
    if not splits.train or not splits.val:
        raise ValueError("empty train or validation split")
    train_samples = list(enumerate_samples(cube, splits.train, window_cfg))
    val_samples = list(enumerate_samples(cube, splits.val, window_cfg))

    params = init_params(model_cfg, window_cfg, cube.n_stations, seed=train_cfg.seed)
    model = DelayModelTrainer(params, model_cfg, graph_art)
    state = OptimizerState()
    report = TrainReport()
    best_params = params.copy()
    best_val = float("inf")
    bad_epochs = 0
    started = time.perf_counter()

    for epoch in range(train_cfg.max_epochs):
        try:
            train_loss = train_epoch(model, train_samples, train_cfg, state)
            val_loss = validation_loss(model, val_samples)
        except NonFiniteLossError:
            report.aborted = True
            break
        report.train_losses.append(train_loss)
        report.val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            report.best_epoch = epoch
            best_params = params.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
        if progress is not None:
            progress({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                      "best_epoch": report.best_epoch,
                      "elapsed_s": round(time.perf_counter() - started, 3)})
        if bad_epochs > train_cfg.patience:
            break

    report.wall_time_s = time.perf_counter() - started
    return best_params, report
