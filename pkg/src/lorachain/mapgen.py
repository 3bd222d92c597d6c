"""Grids of the FLOP-optimal variant over two geometry axes.

Two families are supported: embedding size x adapter rank at fixed batch
and sequence length, and batch x sequence length for a fixed layer.  Each
cell also records whether the adapter reduces the parameter count, so a
plotting tool can draw that boundary.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

from .costmodel import (EXECUTABLE_BACKWARD, FORWARD_VARIANTS, FlopOverflowError, ShapeConfig,
                        param_reduction_holds)
from .selector import select_by_flops

AXIS_PAIRS = {"embed": "rank", "batch": "seqlen"}
LAYER_RULES = ("square", "expand4", "explicit")

DEFAULT_RANGES = {
    "embed": (256, 8192, 256),
    "rank": (8, 4096, 8),
    "batch": (1, 64, 1),
    "seqlen": (64, 2048, 64),
}


class WriteError(OSError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Axes are inclusive ``(start, stop, step)`` ranges.

    For ``embed``/``rank`` maps ``b`` and ``s`` are fixed and the output
    width follows ``layer_rule`` from the embedding size.  For
    ``batch``/``seqlen`` maps ``r`` is fixed and the layer is either
    ``explicit`` (``i``, ``o``) or derived from ``i`` by the rule.
    """

    x_axis: str
    x_range: tuple[int, int, int]
    y_axis: str
    y_range: tuple[int, int, int]
    layer_rule: str = "square"
    b: int | None = None
    s: int | None = None
    i: int | None = None
    o: int | None = None
    r: int | None = None

    def __post_init__(self):
        if AXIS_PAIRS.get(self.x_axis) != self.y_axis:
            raise ValueError(f"unsupported axes {self.x_axis!r} x {self.y_axis!r}")
        if self.layer_rule not in LAYER_RULES:
            raise ValueError(f"unknown layer rule {self.layer_rule!r}")
        for rng in (self.x_range, self.y_range):
            start, stop, step = rng
            if start < 1 or stop < start or step < 1:
                raise ValueError(f"invalid axis range {rng}")
        if self.x_axis == "embed":
            if self.layer_rule == "explicit":
                raise ValueError("an embed axis needs a square or expand4 layer rule")
            _require(self, "b", "s")
        else:
            _require(self, "r", "i")
            if self.layer_rule == "explicit":
                _require(self, "o")

    @property
    def xs(self) -> list[int]:
        start, stop, step = self.x_range
        return list(range(start, stop + 1, step))

    @property
    def ys(self) -> list[int]:
        start, stop, step = self.y_range
        return list(range(start, stop + 1, step))

    def _out_dim(self, i):
        if self.layer_rule == "square":
            return i
        if self.layer_rule == "expand4":
            return 4 * i
        return self.o

    def shape_at(self, x: int, y: int) -> ShapeConfig:
        if self.x_axis == "embed":
            return ShapeConfig(self.b, self.s, x, self._out_dim(x), y)
        return ShapeConfig(x, y, self.i, self._out_dim(self.i), self.r)


def _require(spec, *names):
    missing = [n for n in names if getattr(spec, n) is None]
    if missing:
        raise ValueError(f"grid over {spec.x_axis}/{spec.y_axis} needs {', '.join(missing)}")


@dataclass(frozen=True)
class Cell:
    x: int
    y: int
    variant: str | None
    param_reduction: bool
    flops: dict[str, int] | None

    @property
    def valid(self) -> bool:
        return self.variant is not None


@dataclass(frozen=True)
class AreaMap:
    spec: GridSpec
    which: str
    candidates: tuple[str, ...]
    cells: tuple[Cell, ...]

    def cell(self, x: int, y: int) -> Cell:
        for c in self.cells:
            if c.x == x and c.y == y:
                return c
        raise KeyError((x, y))


def candidates_for(which: str) -> tuple[str, ...]:
    if which == "forward":
        return tuple(v.value for v in FORWARD_VARIANTS)
    if which == "backward":
        return tuple(v.value for v in EXECUTABLE_BACKWARD)
    raise ValueError(f"which must be 'forward' or 'backward', got {which!r}")


def compute_cell(spec: GridSpec, which: str, x: int, y: int) -> Cell:
    candidates = candidates_for(which)
    shape = spec.shape_at(x, y)
    try:
        plan = select_by_flops(shape)
    except FlopOverflowError:
        return Cell(x, y, None, param_reduction_holds(shape), None)
    choice = plan.forward_choice if which == "forward" else plan.backward_choice
    return Cell(x, y, choice.value, plan.parameter_reduction,
                {k: plan.evidence[k] for k in candidates})


def area_map(spec: GridSpec, which: str) -> AreaMap:
    """Best variant for every ``(x, y)`` cell, x-major then y."""
    candidates = candidates_for(which)
    cells = tuple(compute_cell(spec, which, x, y) for x in spec.xs for y in spec.ys)
    return AreaMap(spec, which, candidates, cells)


def csv_header(grid: AreaMap) -> list[str]:
    return (["x", "y", "variant", "param_reduction", "flops_best"]
            + [f"flops_{v}" for v in grid.candidates])


def render_csv(grid: AreaMap) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(grid))
    for c in grid.cells:
        pr = "true" if c.param_reduction else "false"
        if c.valid:
            w.writerow([c.x, c.y, c.variant, pr, c.flops[c.variant]]
                       + [c.flops[v] for v in grid.candidates])
        else:
            w.writerow([c.x, c.y, "invalid", pr, ""] + [""] * len(grid.candidates))
    return buf.getvalue()


def emit_csv(grid: AreaMap, destination) -> None:
    """Write ``grid`` as UTF-8 CSV to a path or a text stream."""
    text = render_csv(grid)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    try:
        with open(os.fspath(destination), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise WriteError(exc.errno, f"cannot write map to {destination}: {exc.strerror}") from exc

