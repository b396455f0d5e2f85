"""
Named parameter containers shared by the SSM kernel and the networks.
"""

from collections import OrderedDict
from typing import Dict, Iterator, Tuple

import numpy as np

from .core import Tensor


class Module:
    """Holds named trainable tensors and child modules, addressed by dotted names."""

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())

    def __getattr__(self, name: str):
        params = self.__dict__.get("_parameters", {})
        if name in params:
            return params[name]
        children = self.__dict__.get("_children", {})
        if name in children:
            return children[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def add_parameter(self, name: str, value) -> Tensor:
        tensor = Tensor(value, requires_grad=True)
        self._parameters[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._parameters.items():
            yield prefix + name, tensor
        for child_name, child in self._children.items():
            yield from child.named_parameters(prefix + child_name + ".")

    def parameters(self) -> Dict[str, Tensor]:
        return OrderedDict(self.named_parameters())

    def num_parameters(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

    def zero_grad(self) -> None:
        for _, tensor in self.named_parameters():
            tensor.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return OrderedDict((name, t.numpy()) for name, t in self.named_parameters())

    def _locate(self, name: str) -> Tuple["Module", str]:
        module = self
        *path, leaf = name.split(".")
        for part in path:
            if part not in module._children:
                raise KeyError(f"unknown parameter {name!r}")
            module = module._children[part]
        if leaf not in module._parameters:
            raise KeyError(f"unknown parameter {name!r}")
        return module, leaf

    def assign(self, values: Dict[str, np.ndarray]) -> None:
        """
        Replace parameters by fresh tensors holding ``values``.

        Args:
            values: Mapping of dotted parameter names to arrays of matching shape
        """
        for name, value in values.items():
            module, leaf = self._locate(name)
            value = np.asarray(value, dtype=np.float64)
            current = module._parameters[leaf]
            if value.shape != current.shape:
                raise ValueError(f"shape mismatch for {name}: {value.shape} != {current.shape}")
            module._parameters[leaf] = Tensor(value, requires_grad=True)
