"""AdamW with decoupled weight decay and a warmup/linear-decay schedule."""

from __future__ import annotations

import logging

import numpy as np

from .tensor import Tensor

log = logging.getLogger(__name__)


def warmup_linear(step: int, peak_lr: float, warmup_steps: int, total_steps: int) -> float:
    """Learning rate at ``step``: linear 0 -> peak over the warmup, then
    linear decay back to 0 at ``total_steps``. Step 0 gives 0 whenever
    warmup is nonzero."""
    if total_steps <= 0:
        return peak_lr
    if warmup_steps > 0 and step < warmup_steps:
        return peak_lr * step / warmup_steps
    if total_steps <= warmup_steps:
        return peak_lr
    frac = (total_steps - step) / (total_steps - warmup_steps)
    return peak_lr * max(0.0, frac)


class AdamW:
    """Adam moments on the gradient; weight decay applied directly to the
    parameter (never folded into the moment estimates).

    Update per step t (1-based), per parameter p with gradient g:

        m   <- beta1*m + (1-beta1)*g
        v   <- beta2*v + (1-beta2)*g*g
        mh  =  m / (1 - beta1**t);  vh = v / (1 - beta2**t)
        p   <- p - lr_t * (mh / (sqrt(vh) + eps) + weight_decay * p)

    A step whose gradients contain NaN or Inf is skipped entirely (moments
    and step counter untouched) and counted in ``skipped_steps``.
    """

    def __init__(self, params, peak_lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, warmup_steps: int = 0, total_steps: int = 0):
        self.params: list[tuple[str, Tensor]] = list(params)
        self.peak_lr = peak_lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.total_steps = total_steps
        self.t = 0
        self.skipped_steps = 0
        self._m = [np.zeros_like(p.data) for _, p in self.params]
        self._v = [np.zeros_like(p.data) for _, p in self.params]

    def current_lr(self) -> float:
        return warmup_linear(self.t, self.peak_lr, self.warmup_steps, self.total_steps)

    def step(self):
        grads = []
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                self.skipped_steps += 1
                log.warning("non-finite gradient in %s; skipping optimizer step %d", name, self.t)
                return False
            grads.append(g)
        lr = self.current_lr()
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (name, p), g, m, v in zip(self.params, grads, self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - (lr * update).astype(p.data.dtype, copy=False)
        return True

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()
