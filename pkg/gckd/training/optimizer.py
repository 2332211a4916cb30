"""AdamW with decoupled weight decay and a cosine learning-rate schedule."""
import logging
import math
from typing import Dict

import numpy as np

from gckd.model.params import Grads, ParamSet

logger = logging.getLogger(__name__)


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` to 0 over ``total_steps``; constant when total_steps <= 0."""
    if total_steps <= 0:
        return base_lr
    progress = min(step, total_steps) / total_steps
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def clip_by_global_norm(grads: Grads, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class AdamW:
    """Moments are keyed by parameter name; only the arrays passed to ``step`` are touched."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.01) -> None:
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: ParamSet, grads: Grads, lr: float = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        zero = all(not np.any(g) for g in grads.values())
        for name, grad in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(grad)
                self.v[name] = np.zeros_like(grad)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * grad
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * grad * grad
        if zero:
            logger.debug(f"zero gradient at optimizer step {self.t}; parameters left unchanged")
            return
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name in grads:
            param = params[name]
            m_hat = self.m[name] / bias1
            v_hat = self.v[name] / bias2
            param -= lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * param)
