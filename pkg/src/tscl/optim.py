"""Bias-corrected Adam with optional L2 weight decay, implemented functionally.

A step consumes the current values, gradients, and moment state and
returns fresh ones; nothing is mutated, and parameters are visited in
sorted-name order so updates are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tscl.errors import ParameterError
from tscl.tensor import Tensor2D


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ParameterError(
                f"betas must lie in [0, 1), got {self.beta1}, {self.beta2}"
            )
        if self.eps <= 0:
            raise ParameterError(f"eps must be positive, got {self.eps}")
        if self.weight_decay < 0:
            raise ParameterError(
                f"weight decay must be >= 0, got {self.weight_decay}"
            )


@dataclass(frozen=True)
class AdamState:
    step: int
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]


def init_adam_state(values: dict[str, Tensor2D]) -> AdamState:
    zeros = {name: np.zeros(t.shape) for name, t in sorted(values.items())}
    return AdamState(
        step=0,
        first_moment={k: v.copy() for k, v in zeros.items()},
        second_moment=zeros,
    )


def adam_step(
    config: AdamConfig,
    state: AdamState,
    values: dict[str, Tensor2D],
    grads: dict[str, Tensor2D | None],
) -> tuple[AdamState, dict[str, Tensor2D]]:
    """One update. Parameters whose gradient is None pass through untouched."""
    step = state.step + 1
    bias1 = 1.0 - config.beta1**step
    bias2 = 1.0 - config.beta2**step
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    new_values: dict[str, Tensor2D] = {}
    for name in sorted(values):
        x = values[name].array
        grad = grads.get(name)
        if grad is None:
            new_m[name] = state.first_moment[name]
            new_v[name] = state.second_moment[name]
            new_values[name] = values[name]
            continue
        g = grad.array
        if g.shape != x.shape:
            raise ParameterError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name} with shape {x.shape}"
            )
        if config.weight_decay:
            g = g + config.weight_decay * x
        m = config.beta1 * state.first_moment[name] + (1.0 - config.beta1) * g
        v = config.beta2 * state.second_moment[name] + (1.0 - config.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        new_m[name] = m
        new_v[name] = v
        new_values[name] = Tensor2D(
            x - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        )
    return AdamState(step=step, first_moment=new_m, second_moment=new_v), new_values
