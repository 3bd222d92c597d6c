"""Small dense linear-algebra layer used by every LoRA graph variant.

Matrices are plain 2-D numpy arrays in C (row-major) order.  Everything
here is a pure function; the only state is the optional ``FlopCounter``
a caller threads through to audit executed work.

Random fills use numpy's ``PCG64`` bit generator seeded directly with the
integer seed.  numpy keeps the PCG64 stream and ``Generator.uniform``
stable across releases, so seeded fixtures do not drift.
"""

from __future__ import annotations

import numpy as np

Matrix = np.ndarray

HIGH = np.float64
SINGLE = np.float32

REL_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


def as_matrix(a, dtype=None) -> Matrix:
    """Coerce ``a`` to a contiguous 2-D float array."""
    m = np.ascontiguousarray(a, dtype=dtype if dtype is not None else None)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {m.shape}")
    if not np.issubdtype(m.dtype, np.floating):
        m = m.astype(HIGH)
    return m


def matmul(left: Matrix, right: Matrix, transpose_left: bool = False,
           transpose_right: bool = False) -> Matrix:
    """Return ``op(left) @ op(right)`` where ``op`` optionally transposes.

    Transposes are taken as views, so no extra operand copy is made.
    """
    a = left.T if transpose_left else left
    b = right.T if transpose_right else right
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    return np.ascontiguousarray(a @ b)


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape}")
    return a + b


def fill_random(rows: int, cols: int, seed, scale: float = 1.0,
                dtype=HIGH) -> Matrix:
    """Reproducible matrix with entries drawn uniformly from [-scale, scale].

    ``seed`` may be an int or a sequence of ints (fed to ``PCG64`` as-is).
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"fill_random needs rows, cols >= 1, got {rows}x{cols}")
    rng = np.random.Generator(np.random.PCG64(seed))
    if scale == 0:
        return np.zeros((rows, cols), dtype=dtype)
    return rng.uniform(-scale, scale, size=(rows, cols)).astype(dtype, copy=False)


def max_rel_diff(a: Matrix, b: Matrix) -> float:
    """Worst elementwise relative difference, guarded by ``REL_EPS`` against 0/0."""
    if a.shape != b.shape:
        raise ShapeError(f"max_rel_diff needs identical shapes, got {a.shape} and {b.shape}")
    a = np.asarray(a, dtype=HIGH)
    b = np.asarray(b, dtype=HIGH)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_EPS)
    return float(np.max(np.abs(a - b) / denom))


class FlopCounter:
    """Per-invocation tally of executed matmul FLOPs and workspace.

    Each ``m x k @ k x n`` product adds ``2*m*k*n``.  Matrix additions are
    not counted, matching the convention of the analytic cost table.
    """

    def __init__(self):
        self.flops = 0
        self.workspace = 0
        self.products: list[tuple[int, int, int]] = []

    def matmul(self, left, right, transpose_left=False, transpose_right=False):
        out = matmul(left, right, transpose_left, transpose_right)
        m, n = out.shape
        k = left.shape[0] if transpose_left else left.shape[1]
        self.flops += 2 * m * k * n
        self.products.append((m, k, n))
        return out

    def temp(self, m: Matrix) -> Matrix:
        """Register ``m`` as a workspace temporary and return it."""
        self.workspace += m.size
        return m
