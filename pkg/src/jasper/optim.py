"""NovoGrad, SGD with momentum, and learning-rate schedules.

Parameters and gradients are dicts of named numpy arrays; each name is one
"layer" for NovoGrad's per-layer second moment (weights and biases separate).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name!r}")


@dataclass(frozen=True)
class NovoGradHyper:
    beta1: float = 0.95
    beta2: float = 0.5
    eps: float = 1e-8
    weight_decay: float = 1e-3

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be >= 0")


@dataclass
class NovoGradState:
    v: dict[str, float] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def second_moment_count(self) -> int:
        """Stored second-moment scalars; one per layer."""
        return len(self.v)


def novograd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: NovoGradState,
    hyper: NovoGradHyper,
    lr: float,
) -> dict[str, np.ndarray]:
    """One NovoGrad update; returns new parameter arrays and advances ``state``.

    The first step seeds ``v = ||g||^2`` and ``m = g/sqrt(v+eps) + d*w``
    so the first update is invariant to gradient scale.
    """
    _check_finite(grads)
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")
    if state.step and set(state.v) != set(grads):
        raise ValueError("layer partition differs from optimizer state")
    b1, b2, eps, d = hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay
    new = {}
    for name, w in params.items():
        g = grads[name]
        g2 = float(np.vdot(g, g))
        if state.step == 0:
            v = g2
            m = g / math.sqrt(v + eps) + d * w
        else:
            v = b2 * state.v[name] + (1 - b2) * g2
            m = b1 * state.m[name] + g / math.sqrt(v + eps) + d * w
        state.v[name] = v
        state.m[name] = m
        new[name] = w - lr * m
    state.step += 1
    return new


@dataclass
class SgdMomentumState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sgd_momentum_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: SgdMomentumState,
    lr: float,
    mu: float = 0.9,
    wd: float = 0.0,
) -> dict[str, np.ndarray]:
    """``velocity = mu*velocity + (g + wd*w)``; ``w -= lr*velocity``."""
    _check_finite(grads)
    for name, w in params.items():
        if not np.isfinite(w).all():
            raise FloatingPointError(f"non-finite parameter {name!r}")
    new = {}
    for name, w in params.items():
        vel = state.velocity.get(name)
        step = grads[name] + wd * w
        vel = step if vel is None else mu * vel + step
        state.velocity[name] = vel
        new[name] = w - lr * vel
    state.step += 1
    return new


def lr_schedule(policy: str, step: int, total_steps: int, base_lr: float, warmup: int = 0) -> float:
    """``poly``: base*(1 - step/total)^2; ``const``: base. Optional linear warmup over ``warmup`` steps."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    scale = min(1.0, step / warmup) if warmup > 0 else 1.0
    if policy == "const":
        return base_lr * scale
    if policy == "poly":
        frac = step / total_steps if total_steps else 1.0
        return base_lr * scale * (1.0 - frac) ** 2
    raise ValueError(f"unknown lr policy {policy!r}")


class NovoGrad:
    """In-place NovoGrad over a named parameter store."""

    kind = "novograd"

    def __init__(self, beta1=0.95, beta2=0.5, eps=1e-8, weight_decay=1e-3):
        self.hyper = NovoGradHyper(beta1, beta2, eps, weight_decay)
        self.state = NovoGradState()

    def hyperparams(self) -> dict:
        return asdict(self.hyper)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        new = novograd_step(params, grads, self.state, self.hyper, lr)
        for name, w in new.items():
            params[name][...] = w

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.state.step], dtype=np.float64)}
        for name in self.state.m:
            out[f"v/{name}"] = np.array([self.state.v[name]])
            out[f"m/{name}"] = self.state.m[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.state = NovoGradState(step=int(arrays["step"][0]))
        for key, arr in arrays.items():
            if key.startswith("v/"):
                self.state.v[key[2:]] = float(arr[0])
            elif key.startswith("m/"):
                self.state.m[key[2:]] = arr.copy()


class SGDMomentum:
    kind = "sgd"

    def __init__(self, momentum=0.9, weight_decay=1e-3):
        self.mu = momentum
        self.wd = weight_decay
        self.state = SgdMomentumState()

    def hyperparams(self) -> dict:
        return {"momentum": self.mu, "weight_decay": self.wd}

    def step(self, params, grads, lr):
        new = sgd_momentum_step(params, grads, self.state, lr, self.mu, self.wd)
        for name, w in new.items():
            params[name][...] = w

    def state_arrays(self):
        out = {"step": np.array([self.state.step], dtype=np.float64)}
        out.update({f"velocity/{k}": v for k, v in self.state.velocity.items()})
        return out

    def load_state_arrays(self, arrays):
        self.state = SgdMomentumState(step=int(arrays["step"][0]))
        for key, arr in arrays.items():
            if key.startswith("velocity/"):
                self.state.velocity[key[len("velocity/") :]] = arr.copy()


def make_optimizer(kind: str, **hyper):
    if kind == "novograd":
        return NovoGrad(**hyper)
    if kind == "sgd":
        return SGDMomentum(**hyper)
    raise ValueError(f"unknown optimizer {kind!r}")
