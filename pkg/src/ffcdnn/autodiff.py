"""Gradient plumbing: validated tensors, a minimal reverse tape, grad checks.

Dense real tensors are plain ``numpy.ndarray`` objects (shape + row-major
data); :func:`as_tensor` is the validating constructor that rejects NaN/Inf
at the boundary.  Layers implement their own adjoints; :class:`GradTape`
only chains those adjoints so composite models can replay them seed-first.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .errors import InputDataError, NonDifferentiablePointError

__all__ = ["as_tensor", "Parameter", "GradTape", "grad_check"]


def as_tensor(data, shape: Optional[tuple] = None) -> np.ndarray:
    """Validate ``data`` as a finite float64 array (optionally reshaped).

    Raises :class:`InputDataError` on NaN/Inf or on a shape whose extent
    product disagrees with the data length.
    """
    arr = np.array(data, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != arr.size:
            raise InputDataError(
                f"shape {tuple(shape)} incompatible with {arr.size} values"
            )
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise InputDataError("tensor rejects non-finite values")
    return arr


class Parameter:
    """A trainable array with a gradient slot of the same shape/dtype.

    Complex-valued parameters store their gradient as a complex array whose
    real/imag parts are d/d(Re) and d/d(Im).
    """

    def __init__(self, value: np.ndarray, name: str = ""):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)
        self.name = name

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        return f"Parameter({self.name or 'unnamed'}, shape={self.value.shape})"


class GradTape:
    """Ordered adjoint closures recorded during a forward pass.

    Each closure maps the gradient flowing into its output to the gradient
    of its input (parameter gradients are accumulated as side effects).
    Replaying backward from a seed yields the input gradient with the input
    shape.  Tapes are per-call objects and never shared between threads.
    """

    def __init__(self):
        self._records: list[Callable[[np.ndarray], np.ndarray]] = []

    def record(self, backward_fn: Callable[[np.ndarray], np.ndarray]):
        self._records.append(backward_fn)

    def __len__(self):
        return len(self._records)

    def backward(self, seed: np.ndarray) -> np.ndarray:
        if not self._records:
            raise InputDataError("backward called on an empty tape")
        grad = seed
        for fn in reversed(self._records):
            grad = fn(grad)
        return grad


def _central_quotient(op, x: np.ndarray, index: int, eps: float) -> float:
    xp = x.copy()
    xp.flat[index] += eps
    xm = x.copy()
    xm.flat[index] -= eps
    return (float(op(xp)[0]) - float(op(xm)[0])) / (2.0 * eps)


def grad_check(op, x, eps: float = 1e-5, diverge_threshold: float = 1e-2) -> float:
    """Compare an operation's analytic gradient against central differences.

    ``op(x)`` must return ``(scalar_value, gradient)`` with the gradient
    shaped like ``x``.  Returns the max over components of

        |analytic - central| / max(|analytic|, |central|, 1e-12).

    If the worst component disagrees badly and its difference quotient
    diverges as ``eps`` shrinks, the point is reported as non-differentiable
    via :class:`NonDifferentiablePointError` instead of a large error value.
    """
    if not (0.0 < eps <= 1e-2):
        raise InputDataError("eps must lie in (0, 1e-2]")
    x = as_tensor(x)
    value, grad = op(x)
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise InputDataError(
            f"analytic gradient shape {grad.shape} != input shape {x.shape}"
        )

    numeric = np.zeros_like(x)
    for i in range(x.size):
        numeric.flat[i] = _central_quotient(op, x, i, eps)

    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-12)
    rel = np.abs(grad - numeric) / denom
    worst = int(np.argmax(rel))
    err = float(rel.flat[worst])

    if err > diverge_threshold:
        q0 = numeric.flat[worst]
        q1 = _central_quotient(op, x, worst, eps / 2.0)
        q2 = _central_quotient(op, x, worst, eps / 4.0)
        # A smooth op's quotients contract by ~4x per halving; divergence
        # (a step's quotients double) marks a non-differentiable point.
        if abs(q2 - q1) > 1.5 * abs(q1 - q0) + 1e-9:
            raise NonDifferentiablePointError(
                f"difference quotient diverges at flat index {worst}: "
                f"{q0:.6g} -> {q1:.6g} -> {q2:.6g}"
            )
    return err
