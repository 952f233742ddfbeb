"""Adam optimizer (bias-corrected first/second moments)."""

import numpy as np


def adam_step(param, grad, m, v, t, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place on ``param``, ``m`` and ``v``. ``t`` is 1-based."""
    if t < 1:
        raise ValueError(f"adam_step needs t >= 1, got {t}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            adam_step(p.data, p.grad, self.m[i], self.v[i], self.t,
                      lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
