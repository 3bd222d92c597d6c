"""Executable forward and backward graphs through a LoRA-adapted linear layer.

The layer computes ``Y = XW + XAB``.  Every variant takes only the raw
operands (``X``, ``W``, ``A``, ``B`` and the cotangent ``dY``); nothing is
cached between forward and backward.  The one exception is the baseline
path (``baseline_forward`` / ``baseline_backward``), which mimics default
autograd by keeping ``XA`` alive for reuse.

Pass a ``FlopCounter`` as ``counter`` to audit the executed products and
temporaries of a single call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .costmodel import UnsupportedVariantError, VariantId
from .dense import FlopCounter, Matrix, ShapeError, add, matmul


class NumericError(ArithmeticError):
    pass


class _Untracked:
    matmul = staticmethod(matmul)

    @staticmethod
    def temp(m):
        return m


_UNTRACKED = _Untracked()


@dataclass(frozen=True)
class LoraLayer:
    W: Matrix
    A: Matrix
    B: Matrix

    def __post_init__(self):
        i, o = self.W.shape
        if self.A.shape[0] != i or self.B.shape[1] != o or self.A.shape[1] != self.B.shape[0]:
            raise ShapeError(
                f"inconsistent layer: W {self.W.shape}, A {self.A.shape}, B {self.B.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        """``(i, o, r)``."""
        return self.W.shape[0], self.W.shape[1], self.A.shape[1]


class Gradients(NamedTuple):
    dA: Matrix
    dB: Matrix
    dX: Matrix


def _check_input(X, layer):
    if X.ndim != 2 or X.shape[1] != layer.W.shape[0]:
        raise ShapeError(f"input {X.shape} does not match weight {layer.W.shape}")


def _check_cotangent(X, layer, dY):
    _check_input(X, layer)
    expected = (X.shape[0], layer.W.shape[1])
    if dY.shape != expected:
        raise ShapeError(f"cotangent {dY.shape} does not match output {expected}")


def forward(v: VariantId, X: Matrix, layer: LoraLayer,
            counter: FlopCounter | None = None) -> Matrix:
    v = VariantId(v)
    _check_input(X, layer)
    k = counter or _UNTRACKED
    W, A, B = layer.W, layer.A, layer.B
    if v is VariantId.F1:
        xa = k.temp(k.matmul(X, A))
        return add(k.matmul(X, W), k.matmul(xa, B))
    if v is VariantId.F2:
        merged = k.temp(add(W, k.matmul(A, B)))
        return k.matmul(X, merged)
    raise UnsupportedVariantError(f"{v.value} is not a forward variant")


def _backward1(X, W, A, B, dY, k):
    z1 = k.temp(k.matmul(dY, B, transpose_right=True))
    z2 = k.temp(k.matmul(X, A))
    dA = k.matmul(X, z1, transpose_left=True)
    dB = k.matmul(z2, dY, transpose_left=True)
    dX = add(k.matmul(dY, W, transpose_right=True), k.matmul(z1, A, transpose_right=True))
    return Gradients(dA, dB, dX)


def _backward2(X, W, A, B, dY, k):
    z1 = k.temp(k.matmul(dY, B, transpose_right=True))
    z2 = k.temp(k.matmul(X, dY, transpose_left=True))
    dA = k.matmul(X, z1, transpose_left=True)
    dB = k.matmul(A, z2, transpose_left=True)
    dX = add(k.matmul(dY, W, transpose_right=True), k.matmul(z1, A, transpose_right=True))
    return Gradients(dA, dB, dX)


def _backward3(X, W, A, B, dY, k):
    z1 = k.temp(k.matmul(dY, B, transpose_right=True))
    z2 = k.temp(k.matmul(X, dY, transpose_left=True))
    dA = k.matmul(z2, B, transpose_right=True)
    dB = k.matmul(A, z2, transpose_left=True)
    dX = add(k.matmul(dY, W, transpose_right=True), k.matmul(z1, A, transpose_right=True))
    return Gradients(dA, dB, dX)


def _backward4(X, W, A, B, dY, k):
    z1 = k.temp(add(W, k.matmul(A, B)))
    z2 = k.temp(k.matmul(X, dY, transpose_left=True))
    dA = k.matmul(z2, B, transpose_right=True)
    dB = k.matmul(A, z2, transpose_left=True)
    dX = k.matmul(dY, z1, transpose_right=True)
    return Gradients(dA, dB, dX)


def _backward5(X, W, A, B, dY, k):
    z1 = k.temp(k.matmul(dY, B, transpose_right=True))
    z2 = k.temp(k.matmul(X, A))
    z3 = k.temp(add(W, k.matmul(A, B)))
    dA = k.matmul(X, z1, transpose_left=True)
    dB = k.matmul(z2, dY, transpose_left=True)
    dX = k.matmul(dY, z3, transpose_right=True)
    return Gradients(dA, dB, dX)


_BACKWARDS = {
    VariantId.B1: _backward1,
    VariantId.B2: _backward2,
    VariantId.B3: _backward3,
    VariantId.B4: _backward4,
    VariantId.B5: _backward5,
}


def backward(v: VariantId, X: Matrix, layer: LoraLayer, dY: Matrix,
             counter: FlopCounter | None = None) -> Gradients:
    """Gradients of ``A``, ``B`` and ``X`` for cotangent ``dY`` using variant ``v``."""
    v = VariantId(v)
    if v not in _BACKWARDS:
        raise UnsupportedVariantError(f"{v.value} is not an executable backward variant")
    _check_cotangent(X, layer, dY)
    return _BACKWARDS[v](X, layer.W, layer.A, layer.B, dY, counter or _UNTRACKED)


def reference_backward(X: Matrix, layer: LoraLayer, dY: Matrix) -> Gradients:
    """Closed-form gradients in a fixed association order.

    dA = X^T (dY B^T);  dB = A^T (X^T dY);  dX = dY W^T + (dY B^T) A^T
    """
    _check_cotangent(X, layer, dY)
    W, A, B = layer.W, layer.A, layer.B
    dy_bt = dY @ B.T
    dA = X.T @ dy_bt
    dB = A.T @ (X.T @ dY)
    dX = dY @ W.T + dy_bt @ A.T
    return Gradients(dA, dB, dX)


def baseline_forward(X: Matrix, layer: LoraLayer,
                     counter: FlopCounter | None = None) -> tuple[Matrix, Matrix]:
    """Default-autograd forward: F1, but ``XA`` is returned for reuse."""
    _check_input(X, layer)
    k = counter or _UNTRACKED
    xa = k.matmul(X, layer.A)
    y = add(k.matmul(X, layer.W), k.matmul(xa, layer.B))
    return y, xa


def baseline_backward(X: Matrix, layer: LoraLayer, dY: Matrix, xa: Matrix,
                      counter: FlopCounter | None = None) -> Gradients:
    """B1 with the cached ``XA`` in place of its recomputation."""
    _check_cotangent(X, layer, dY)
    if xa.shape != (X.shape[0], layer.A.shape[1]):
        raise ShapeError(f"cached XA {xa.shape} does not match input and rank")
    k = counter or _UNTRACKED
    W, A, B = layer.W, layer.A, layer.B
    z1 = k.temp(k.matmul(dY, B, transpose_right=True))
    dA = k.matmul(X, z1, transpose_left=True)
    dB = k.matmul(xa, dY, transpose_left=True)
    dX = add(k.matmul(dY, W, transpose_right=True), k.matmul(z1, A, transpose_right=True))
    return Gradients(dA, dB, dX)


def _probe_loss(X, layer, G):
    y = forward(VariantId.F1, X, layer)
    return float(np.sum(y * G))


def finite_difference_check(X: Matrix, layer: LoraLayer, G: Matrix, h: float = 1e-5,
                            variant: VariantId = VariantId.B1) -> dict[str, float]:
    """Compare ``backward(variant)`` against central differences of ``sum(Y * G)``.

    Returns the worst elementwise relative error for each of ``A``, ``B``
    and ``X``.  The denominator is floored at 1e-3 of the largest analytic
    entry of that tensor so entries that are zero up to rounding do not
    dominate.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    _check_cotangent(X, layer, G)
    grads = backward(variant, X, layer, G)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite analytic gradient")

    def loss_with(name, arr):
        parts = {"X": X, "W": layer.W, "A": layer.A, "B": layer.B}
        parts[name] = arr
        return _probe_loss(parts["X"], LoraLayer(parts["W"], parts["A"], parts["B"]), G)

    errors = {}
    for name, base, analytic in (("A", layer.A, grads.dA), ("B", layer.B, grads.dB),
                                 ("X", X, grads.dX)):
        fd = np.empty_like(base, dtype=np.float64)
        work = base.astype(np.float64, copy=True)
        for idx in np.ndindex(base.shape):
            orig = work[idx]
            work[idx] = orig + h
            plus = loss_with(name, work)
            work[idx] = orig - h
            minus = loss_with(name, work)
            work[idx] = orig
            fd[idx] = (plus - minus) / (2 * h)
        if not np.all(np.isfinite(fd)):
            raise NumericError(f"non-finite finite-difference estimate for {name}")
        floor = max(1e-3 * float(np.max(np.abs(analytic))), 1e-12)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(analytic)), floor)
        errors[name] = float(np.max(np.abs(fd - analytic) / denom))
    return errors
