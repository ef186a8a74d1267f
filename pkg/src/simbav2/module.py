"""Parameter containers.

A :class:`Parameter` is a leaf tensor that an optimizer updates. Parameters
flagged ``unit_rows`` are projected back onto the unit sphere (row-wise) after
every optimizer step; everything else (scalers, interpolation vectors, biases)
is left free.
"""

from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ("unit_rows",)

    def __init__(self, data, unit_rows: bool = False):
        # C order keeps BLAS rounding identical after a checkpoint round trip
        super().__init__(np.array(data, dtype=np.float64, order="C"), requires_grad=True)
        self.unit_rows = unit_rows


class Module:
    """Base class that discovers parameters and submodules from attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.named_parameters():
            if state[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {state[name].shape} vs {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


@contextlib.contextmanager
def frozen(*modules: Module):
    """Temporarily stop gradients from reaching the modules' parameters."""
    params = [p for m in modules for p in m.parameters()]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True
