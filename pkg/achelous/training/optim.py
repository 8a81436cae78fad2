"""SGD with momentum, cosine learning-rate schedule with warmup, and weight EMA."""
import math
from collections import OrderedDict
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from achelous.autograd.nn import Module, Parameter
from core.errors import AchelousError, ConfigError


class SGD:
    """v <- m v + g (+ weight decay p); p <- p - lr v."""

    def __init__(self, named_params: Iterable[Tuple[str, Parameter]], lr: float, momentum: float = 0.937,
                 weight_decay: float = 0.0):
        self.params = OrderedDict(named_params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, lr: Optional[float] = None) -> None:
        lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            if p.grad is None:
                raise AchelousError(f"parameter '{name}' has no gradient")
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay and p.ndim > 1:
                g = g + self.weight_decay * p.data
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.data -= (lr * v).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


def cosine_lr(step: int, total_steps: int, lr0: float = 0.03, lr_min: float = 3e-4, warmup_steps: int = 0) -> float:
    """Linear warmup from 0 to lr0, then cosine decay to lr_min at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr0 * step / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    progress = (step - warmup_steps) / span
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * progress))


def ema_update(ema: Dict[str, np.ndarray], current: Dict[str, np.ndarray], decay: float) -> None:
    """e <- d e + (1 - d) p, in place, for every entry."""
    if set(ema) != set(current):
        missing = sorted(set(ema) ^ set(current))[:5]
        raise ConfigError(f"EMA and model entries differ: {missing}")
    for name, value in current.items():
        e = ema[name]
        e *= decay
        e += (1 - decay) * np.asarray(value, dtype=e.dtype)


class ModelEMA:
    """Exponential moving average of a model's parameters and buffers with a warm-up ramp on decay."""

    def __init__(self, model: Module, decay: float = 0.9998, tau: float = 2000.0):
        self.decay = decay
        self.tau = tau
        self.updates = 0
        self.state = OrderedDict((name, np.array(value, copy=True)) for name, value in model.state_dict().items())

    def current_decay(self) -> float:
        return self.decay * (1 - math.exp(-self.updates / self.tau))

    def update(self, model: Module, decay: Optional[float] = None) -> float:
        self.updates += 1
        d = self.current_decay() if decay is None else decay
        ema_update(self.state, model.state_dict(), d)
        return d

    def copy_to(self, model: Module) -> None:
        model.load_state_dict(self.state)
