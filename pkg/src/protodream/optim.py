"""Adam optimizer and the finite-difference gradient oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter buffers."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            g = np.zeros_like(p.data)
        if np.isnan(g).any():
            raise FloatingPointError(f"NaN gradient for parameter {p.name or '<unnamed>'}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return state


class Adam:
    """Convenience wrapper binding an AdamState to a fixed parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=eps)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def grad_check(function, point: np.ndarray, epsilon: float = 1e-5) -> float:
    """Compare reverse-mode gradients against central finite differences.

    `function` maps a leaf Tensor to a scalar Tensor and must be
    deterministic. Returns max over coordinates of
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    point = np.asarray(point, dtype=np.float64)
    x = Tensor(point.copy(), requires_grad=True)
    out = function(x)
    out.backward()
    analytic = np.zeros_like(point) if x.grad is None else x.grad.reshape(point.shape)

    flat = point.ravel()
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + epsilon
        hi = float(function(Tensor(point.copy())).data)
        flat[i] = saved - epsilon
        lo = float(function(Tensor(point.copy())).data)
        flat[i] = saved
        numeric[i] = (hi - lo) / (2.0 * epsilon)
    numeric = numeric.reshape(point.shape)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
