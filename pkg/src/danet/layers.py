"""Parameter containers built on the tensor engine."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from danet import ops
from danet.tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """Minimal module tree: parameters, buffers and a train/eval flag."""

    training: bool = True

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        targets: dict[str, np.ndarray] = {n: p.data for n, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = sorted(set(targets) - set(state))
        extra = sorted(set(state) - set(targets))
        if missing or extra:
            raise KeyError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, dst in targets.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != dst.shape:
                raise ValueError(f"{name}: shape {src.shape} vs expected {dst.shape}")
            dst[...] = src


class Linear(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 bias: bool = True, zero: bool = False):
        if zero:
            self.weight = Tensor(np.zeros((c_in, c_out)), requires_grad=True)
        else:
            self.weight = uniform_init(rng, (c_in, c_out), c_in)
        self.bias: Optional[Tensor] = None
        if bias:
            self.bias = (Tensor(np.zeros(c_out), requires_grad=True) if zero
                         else uniform_init(rng, (c_out,), c_in))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    """Channels-last batch norm with learnable affine scale/shift."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.training)


def conv1x1(x: Tensor, layer: Linear, axis: int) -> Tensor:
    """Apply ``layer`` along the channel ``axis`` of ``x`` (a 1x1 convolution)."""
    ax = axis % x.ndim
    if ax == x.ndim - 1:
        return layer(x)
    perm = [i for i in range(x.ndim) if i != ax] + [ax]
    inv = list(np.argsort(perm))
    return ops.transpose(layer(ops.transpose(x, perm)), inv)
