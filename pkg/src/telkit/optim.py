"""Adam with decoupled-from-nothing, plain L2-in-the-gradient weight decay.

The penalty lambda * ||W||^2 is realized by adding 2 * lambda * W to the
gradient before the moment updates, so decay flows through the moment
estimates like any other gradient component.  Decay applies only to the
parameter names listed in ``decay_params`` (dense weight matrices; biases
and conv filters are left alone by the callers here).

Parameters whose grad is None are skipped entirely for that step: no
moment update, no decay.  A head that took part in no loss that step
therefore keeps its values bit for bit.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 weight_decay=0.0, decay_params=()):
        self.params = params  # name -> Tensor
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_params = frozenset(decay_params)
        unknown = self.decay_params - set(params)
        if unknown:
            raise KeyError(f"decay_params not in params: {sorted(unknown)}")
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self):
        """One update over all params that currently hold a gradient."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name in self.params:  # dict order is fixed at model init
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            if self.weight_decay and name in self.decay_params:
                g = g + (2.0 * self.weight_decay) * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()
