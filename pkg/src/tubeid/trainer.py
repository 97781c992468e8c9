"""Full-batch Adam training for the forward problem and for loss-constant identification."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, grad_loss
from .losses import LossBreakdown, LossSuite
from .physics import LossConstants
from .resonet import ResoNet

log = logging.getLogger(__name__)

LOSS_SLOTS = ("log_Gc", "log_Rc")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    freeze_epochs: int = 2000
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints
    noise_level: float = 0.0
    divergence_factor: float = 1e6
    # > 0 decays the step size geometrically from lr to lr_final over the run
    lr_final: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if not (self.lr > 0 and self.eps > 0):
            raise ValueError("lr and eps must be positive")
        if not 0 <= self.freeze_epochs < self.epochs:
            raise ValueError("freeze_epochs must be in [0, epochs)")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        if self.lr_final < 0:
            raise ValueError("lr_final must be >= 0 (0 keeps lr constant)")

    def lr_at(self, epoch: int) -> float:
        """Step size for the 1-based ``epoch``."""
        if not self.lr_final or self.epochs == 1:
            return self.lr
        return self.lr * (self.lr_final / self.lr) ** ((epoch - 1) / (self.epochs - 1))


class Adam:
    """Bias-corrected Adam on a flat parameter array (updated in place)."""

    def __init__(self, n: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError("non-finite gradient passed to Adam")
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Functional single Adam update; ``state`` is ``(m, v, t)`` or None at step 0."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite gradient")
    m, v, t = state if state is not None else (np.zeros_like(params), np.zeros_like(params), 0)
    t += 1
    m = beta1 * m + (1 - beta1) * grads
    v = beta2 * v + (1 - beta2) * grads * grads
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps), (m, v, t)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)

    def append(self, epoch, breakdown: LossBreakdown, model: ResoNet, truth: LossConstants | None):
        row = {"epoch": epoch, **breakdown.as_row(), "G_c": model.G_c, "R_c": model.R_c}
        if truth is not None:
            row["G_c_err_pct"] = 100.0 * (model.G_c - truth.G_c) / truth.G_c
            row["R_c_err_pct"] = 100.0 * (model.R_c - truth.R_c) / truth.R_c
        self.rows.append(row)

    def columns(self):
        return list(self.rows[0].keys()) if self.rows else []


@dataclass
class IdentificationResult:
    G_c: float
    R_c: float
    G_c_error: float  # signed relative error
    R_c_error: float
    G_history: np.ndarray
    R_history: np.ndarray
    final_loss: dict
    seed: int
    runtime: float  # seconds; not part of the serialized result

    def to_json(self) -> dict:
        return {
            "G_c": self.G_c,
            "R_c": self.R_c,
            "G_c_error_pct": 100.0 * self.G_c_error,
            "R_c_error_pct": 100.0 * self.R_c_error,
            "final_loss": self.final_loss,
            "seed": self.seed,
            "epochs": int(self.G_history.size),
        }


def _train(model: ResoNet, suite: LossSuite, config: TrainConfig, mode: str,
           truth: LossConstants | None, on_epoch=None, on_checkpoint=None):
    params = model.params
    opt = Adam(len(params), config.lr, config.beta1, config.beta2, config.eps)
    frozen = np.zeros(len(params), dtype=bool)
    for name in LOSS_SLOTS:
        frozen[params.extent(name)] = True
    train_log = TrainingLog()
    initial = None
    breakdown = None

    def loss_fn(leaves):
        nonlocal breakdown
        breakdown = suite.total(model, leaves, mode)
        return breakdown.tensor

    for epoch in range(1, config.epochs + 1):
        _, grad, _ = grad_loss(loss_fn, params)
        if initial is None:
            initial = breakdown.total
        if breakdown.total > config.divergence_factor * initial:
            raise TrainingDiverged(f"loss {breakdown.total:.3e} at epoch {epoch} (initial {initial:.3e})")
        if mode == "forward" or epoch <= config.freeze_epochs:
            grad[frozen] = 0.0
        opt.lr = config.lr_at(epoch)
        opt.step(params.values, grad)
        train_log.append(epoch, breakdown, model, truth)
        if on_epoch is not None:
            on_epoch(epoch, breakdown, model)
        if on_checkpoint is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            on_checkpoint(epoch, model)
    return train_log, breakdown


def train_forward(model: ResoNet, suite: LossSuite, config: TrainConfig, on_epoch=None, on_checkpoint=None):
    """Minimise the forward loss with the loss constants held at their current values."""
    return _train(model, suite, config, "forward", None, on_epoch, on_checkpoint)


def identify(model: ResoNet, suite: LossSuite, config: TrainConfig, truth: LossConstants,
             on_epoch=None, on_checkpoint=None):
    """Minimise the inverse loss; the loss constants join after ``freeze_epochs``."""
    start = time.perf_counter()
    train_log, final = _train(model, suite, config, "inverse", truth, on_epoch, on_checkpoint)
    G_hist = np.array([r["G_c"] for r in train_log.rows])
    R_hist = np.array([r["R_c"] for r in train_log.rows])
    result = IdentificationResult(
        G_c=model.G_c,
        R_c=model.R_c,
        G_c_error=(model.G_c - truth.G_c) / truth.G_c,
        R_c_error=(model.R_c - truth.R_c) / truth.R_c,
        G_history=G_hist,
        R_history=R_hist,
        final_loss=final.as_row(),
        seed=config.seed,
        runtime=time.perf_counter() - start,
    )
    return result, train_log
