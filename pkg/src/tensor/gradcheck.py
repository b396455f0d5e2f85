"""
Finite-difference gradient checker.
"""

import logging
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Tape, Tensor

logger = logging.getLogger(__name__)

DENOMINATOR_FLOOR = 1e-8


def _evaluate(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    value = f(*inputs)
    if value.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    result = value.item()
    if not np.isfinite(result):
        raise FloatingPointError("grad_check: function value is not finite")
    return result


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = 1e-5,
               indices: Optional[Sequence[Optional[np.ndarray]]] = None) -> float:
    """
    Compare tape gradients of a scalar function against central differences.

    Args:
        f: Function of the input tensors returning a single-element Tensor
        inputs: Tensors to differentiate with respect to (requires_grad is set)
        h: Finite-difference step
        indices: Optional per-input flat indices to perturb; None checks every element

    Returns:
        Maximum relative error |a - n| / max(|a|, |n|, 1e-8) over the checked elements
    """
    inputs = list(inputs)
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None

    with Tape() as tape:
        value = f(*inputs)
    if value.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {value.shape}")
    if not np.isfinite(value.item()):
        raise FloatingPointError("grad_check: function value is not finite")
    if value.requires_grad:
        tape.backward(value)

    worst = 0.0
    for position, tensor in enumerate(inputs):
        analytic = tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
        checked = np.arange(tensor.size) if indices is None or indices[position] is None else indices[position]
        flat = tensor.data.reshape(-1)
        for i in np.asarray(checked, dtype=np.int64):
            original = flat[i]
            flat[i] = original + h
            upper = _evaluate(f, inputs)
            flat[i] = original - h
            lower = _evaluate(f, inputs)
            flat[i] = original
            numeric = (upper - lower) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            error = abs(a - numeric) / max(abs(a), abs(numeric), DENOMINATOR_FLOOR)
            worst = max(worst, error)

    logger.debug(f"grad_check over {len(inputs)} inputs: max relative error {worst:.3e}")
    return worst


def significant_indices(f: Callable[..., Tensor], inputs: Sequence[Tensor], floor: float = 1e-3,
                        limit: Optional[int] = None) -> list:
    """
    Flat indices of each input whose tape gradient magnitude is at least ``floor``.

    With ``limit`` only the largest magnitudes are kept, largest first.
    """
    inputs = list(inputs)
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None
    with Tape() as tape:
        value = f(*inputs)
    tape.backward(value)

    chosen = []
    for tensor in inputs:
        magnitude = np.abs(tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)).reshape(-1)
        order = np.argsort(-magnitude, kind="stable")
        order = order[magnitude[order] >= floor]
        chosen.append(order if limit is None else order[:limit])
    for tensor in inputs:
        tensor.grad = None
    return chosen
