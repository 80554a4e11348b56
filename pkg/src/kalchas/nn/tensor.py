"""Named trainable parameter with an accumulated gradient buffer."""

from __future__ import annotations

import numpy as np


class ParamTensor:
    """A trainable array plus its gradient, accumulated over a batch."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def accumulate(self, g: np.ndarray) -> None:
        if g.shape != self.value.shape:
            raise ValueError(
                f"gradient shape {g.shape} != parameter shape {self.value.shape} for {self.name}"
            )
        self.grad += g

    def astype(self, dtype) -> "ParamTensor":
        p = ParamTensor(self.name, self.value.astype(dtype))
        p.grad = self.grad.astype(dtype)
        return p

    def __repr__(self):
        return f"ParamTensor({self.name!r}, shape={self.value.shape}, dtype={self.value.dtype})"
