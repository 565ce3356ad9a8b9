"""Named parameter collections, initialisation and the Adam optimizer."""

from __future__ import annotations

from collections.abc import Mapping
from typing import Iterator

import numpy as np

from .errors import UsageError
from .tensor import Tensor, default_dtype


class ParamSet(Mapping):
    """Ordered ``name -> Tensor`` map plus the optimizer state that goes with it.

    Adam moments are created by :meth:`attach_optimizer` (or lazily by the
    first :func:`adam_step`) and have the same shapes as the parameters.
    """

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        self.step = 0
        self.m: dict[str, np.ndarray] | None = None
        self.v: dict[str, np.ndarray] | None = None
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    @property
    def has_moments(self) -> bool:
        return self.m is not None

    def attach_optimizer(self) -> None:
        self.m = {k: np.zeros_like(t.data) for k, t in self._tensors.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self._tensors.items()}
        self.step = 0

    def detached(self) -> dict[str, Tensor]:
        """Constant view sharing the values; it never receives gradients."""
        return {k: t.detach() for k, t in self._tensors.items()}

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: t.grad for k, t in self._tensors.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self._tensors.items()}

    def copy(self) -> "ParamSet":
        """Deep copy of the values (no grads, no optimizer state)."""
        return ParamSet({k: Tensor(t.data.copy()) for k, t in self._tensors.items()})

    def num_parameters(self) -> int:
        return sum(t.size for t in self._tensors.values())


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0) -> np.ndarray:
    """Normal samples redrawn until they fall within ``bound`` standard deviations."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return (out * std).astype(default_dtype())


def adam_step(
    params: ParamSet,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> ParamSet:
    """One bias-corrected Adam update, applied in place; grads are cleared."""
    if all(t.grad is None for t in params.values()):
        raise UsageError("adam_step called before backward(): no gradients are populated")
    if not params.has_moments:
        params.attach_optimizer()
    b1, b2 = betas
    params.step += 1
    t = params.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = params.m[name]
        v = params.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data -= update.astype(p.data.dtype, copy=False)
        p.grad = None
    return params


class Adam:
    """Thin stateful wrapper so training code can call ``optimizer.step()``."""

    def __init__(self, params: ParamSet, lr: float = 3e-5, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        params.attach_optimizer()

    def step(self) -> None:
        adam_step(self.params, self.lr, self.betas, self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()
