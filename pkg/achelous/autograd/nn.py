"""Module system: named parameters, buffers, train/eval mode and the basic layers."""
import math
import threading
from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from achelous.autograd import functional as F
from achelous.autograd.tensor import Tensor, default_dtype
from core.errors import ConfigError, ShapeError

_init = threading.local()


def manual_seed(seed: int) -> None:
    """Seed the generator used to initialize parameters of modules built afterwards."""
    _init.rng = np.random.default_rng(seed)


def init_rng() -> np.random.Generator:
    rng = getattr(_init, "rng", None)
    if rng is None:
        rng = _init.rng = np.random.default_rng(0)
    return rng


class Parameter(Tensor):
    """A tensor that always requires grad and is discovered by ``Module.named_parameters``."""

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=default_dtype()), requires_grad=True, name=name)


def uniform_parameter(shape: Tuple[int, ...], fan_in: int) -> Parameter:
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    return Parameter(init_rng().uniform(-bound, bound, size=shape))


class Module:
    """Base class. Parameters, buffers and submodules are plain attributes.

    Names follow attribute paths, with list members addressed by index
    (``neck.blocks.0.conv.weight``).
    """

    buffer_names: Tuple[str, ...] = ()

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal ---------------------------------------------------------

    def _children(self) -> Iterator[Tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, item in enumerate(value):
                    yield f"{name}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        seen = set()

        def walk(module: Module, path: str):
            if id(module) in seen:
                return
            seen.add(id(module))
            yield path, module
            for name, child in module._children():
                if isinstance(child, Module):
                    yield from walk(child, f"{path}.{name}" if path else name)

        yield from walk(self, prefix)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for path, module in self.named_modules(prefix):
            for name, child in module._children():
                if isinstance(child, Parameter) and id(child) not in seen:
                    seen.add(id(child))
                    yield (f"{path}.{name}" if path else name), child

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self) -> Iterator[Tuple[str, np.ndarray]]:
        for path, module in self.named_modules():
            for name in module.buffer_names:
                yield (f"{path}.{name}" if path else name), getattr(module, name)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    # -- mode and gradients -------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- state ----------------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((name, p.data) for name, p in self.named_parameters())
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray], strict: bool = True) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(targets) | set(buffers)
        missing = sorted(expected - set(state))
        unexpected = sorted(set(state) - expected)
        if strict and (missing or unexpected):
            raise ConfigError(f"state mismatch: missing {missing[:5]}, unexpected {unexpected[:5]}")
        for name, value in state.items():
            if name in targets:
                target = targets[name].data
            elif name in buffers:
                target = buffers[name]
            else:
                continue
            if target.shape != np.shape(value):
                raise ShapeError(f"'{name}' expects shape {target.shape}, got {np.shape(value)}")
            target[...] = value


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)


class ModuleList(Module):
    def __init__(self, modules: Iterable[Module]):
        super().__init__()
        self.items = list(modules)

    def __getitem__(self, index: int) -> Module:
        return self.items[index]

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 1,
        stride: int = 1,
        padding: Optional[int] = None,
        groups: int = 1,
        bias: bool = True,
    ):
        super().__init__()
        if in_channels % groups or out_channels % groups:
            raise ShapeError(f"groups={groups} must divide {in_channels} and {out_channels}")
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        self.groups = groups
        fan_in = in_channels // groups * kernel_size * kernel_size
        self.weight = uniform_parameter((out_channels, in_channels // groups, kernel_size, kernel_size), fan_in)
        self.bias = uniform_parameter((out_channels,), fan_in) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm2d(Module):
    buffer_names = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = 0.03, eps: float = 1e-3):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        self.running_mean = np.zeros(channels, dtype=default_dtype())
        self.running_var = np.ones(channels, dtype=default_dtype())

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.weight, self.bias, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class ConvBNAct(Module):
    """Bias-free convolution, batch norm and SiLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 1, stride: int = 1,
                 groups: int = 1, act: bool = True):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, stride, groups=groups, bias=False)
        self.bn = BatchNorm2d(out_channels)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        x = self.bn(self.conv(x))
        return x.silu() if self.act else x


class DWSeparable(Module):
    """Depthwise kxk followed by pointwise 1x1, each with batch norm and SiLU."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1):
        super().__init__()
        self.dw = ConvBNAct(in_channels, in_channels, kernel_size, stride, groups=in_channels)
        self.pw = ConvBNAct(in_channels, out_channels, 1)

    def forward(self, x: Tensor) -> Tensor:
        return self.pw(self.dw(x))


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.weight = uniform_parameter((in_features, out_features), in_features)
        self.bias = uniform_parameter((out_features,), in_features) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.weight = Parameter(np.ones(features))
        self.bias = Parameter(np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.weight, self.bias, self.eps)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"attention width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.wq = uniform_parameter((dim, dim), dim)
        self.wk = uniform_parameter((dim, dim), dim)
        self.wv = uniform_parameter((dim, dim), dim)
        self.wo = uniform_parameter((dim, dim), dim)

    def forward(self, x: Tensor, return_attention: bool = False):
        return F.mhsa(x, self.heads, self.wq, self.wk, self.wv, self.wo, return_attention)
