"""Cross-entropy loss, gradient clipping, and the three adaptive optimizers
offered for training (RMSprop is the default)."""

from __future__ import annotations

import numpy as np

from .autodiff import Variable, record
from .errors import ConfigError, DataError, ShapeError

LOSS_CLAMP = 1e-12  # probability floor before the log, keeps the loss finite


def cross_entropy_loss(probs: Variable, labels: np.ndarray) -> Variable:
    """Mean negative log probability of the true class."""
    if probs.value.ndim != 2:
        raise ShapeError(f"expected [batch, classes] probabilities, got {probs.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = probs.shape
    if labels.shape != (batch,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {batch}")
    if (labels < 0).any() or (labels >= classes).any():
        bad = int(labels[(labels < 0) | (labels >= classes)][0])
        raise DataError(f"label {bad} outside [0, {classes})")
    picked = probs.value[np.arange(batch), labels]
    clamped = np.maximum(picked, LOSS_CLAMP)
    out = Variable(-np.mean(np.log(clamped)))

    def bw(g: np.ndarray) -> None:
        # d/dp of -log(max(p, clamp)) is -1/p above the clamp, 0 below it.
        grad = np.zeros_like(probs.value)
        active = picked >= LOSS_CLAMP
        grad[np.arange(batch), labels] = np.where(active, -1.0 / (batch * clamped), 0.0)
        probs.ensure_grad()[...] += float(g) * grad

    return record("cross_entropy", out, bw)


def clip_gradients(params: list[Variable], max_norm: float = 5.0) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    if max_norm <= 0:
        raise ConfigError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class _Optimizer:
    def __init__(self, params: list[Variable]):
        self.params = list(params)

    def _grad(self, p: Variable) -> np.ndarray:
        return p.grad if p.grad is not None else np.zeros_like(p.value)

    def zero_grads(self) -> None:
        for p in self.params:
            p.zero_grad()


class RmsProp(_Optimizer):
    """cache <- rho*cache + (1-rho)*g^2;  p <- p - lr*g/(sqrt(cache)+eps)."""

    def __init__(self, params, lr: float = 1e-3, rho: float = 0.9, eps: float = 1e-8):
        super().__init__(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.cache = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, cache in zip(self.params, self.cache):
            g = self._grad(p)
            cache *= self.rho
            cache += (1.0 - self.rho) * g * g
            p.value -= self.lr * g / (np.sqrt(cache) + self.eps)


class Adam(_Optimizer):
    """Bias-corrected first/second moments:
    m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
    p <- p - lr * (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps)
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.value) for p in self.params]
        self.v = [np.zeros_like(p.value) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = self._grad(p)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Adadelta(_Optimizer):
    """Accumulate squared gradients and squared updates:
    ag <- rho*ag + (1-rho)*g^2
    delta = -sqrt(ad + eps)/sqrt(ag + eps) * g
    ad <- rho*ad + (1-rho)*delta^2;  p <- p + lr*delta
    """

    def __init__(self, params, lr: float = 1.0, rho: float = 0.95, eps: float = 1e-6):
        super().__init__(params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.acc_grad = [np.zeros_like(p.value) for p in self.params]
        self.acc_delta = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        for p, ag, ad in zip(self.params, self.acc_grad, self.acc_delta):
            g = self._grad(p)
            ag *= self.rho
            ag += (1.0 - self.rho) * g * g
            delta = -np.sqrt(ad + self.eps) / np.sqrt(ag + self.eps) * g
            ad *= self.rho
            ad += (1.0 - self.rho) * delta * delta
            p.value += self.lr * delta


OPTIMIZERS = {"rmsprop": RmsProp, "adam": Adam, "adadelta": Adadelta}
DEFAULT_LR = {"rmsprop": 1e-3, "adam": 1e-3, "adadelta": 1.0}


def make_optimizer(name: str, params: list[Variable], lr: float | None = None) -> _Optimizer:
    if name not in OPTIMIZERS:
        raise ConfigError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[name](params, lr=DEFAULT_LR[name] if lr is None else lr)
