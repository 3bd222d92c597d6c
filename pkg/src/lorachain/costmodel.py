"""Exact FLOP and memory accounting for LoRA forward/backward bracketings.

Shapes use the flattened convention: the input ``X`` is ``(b*s) x i``, the
frozen weight ``W`` is ``i x o`` and the adapter factors are ``A: i x r``
and ``B: r x o``.  All counts are Python integers; anything that would not
fit a signed 64-bit integer raises ``FlopOverflowError`` so downstream
consumers (JSON, CSV, other tools) never see a silently huge or wrapped
value.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

INT64_MAX = 2**63 - 1


class FlopOverflowError(ArithmeticError):
    pass


class UnsupportedVariantError(ValueError):
    pass


def _checked(value: int) -> int:
    if value > INT64_MAX:
        raise FlopOverflowError(f"count {value} exceeds the signed 64-bit range")
    return value


@dataclass(frozen=True)
class ShapeConfig:
    b: int
    s: int
    i: int
    o: int
    r: int

    def __post_init__(self):
        for name in ("b", "s", "i", "o", "r"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise TypeError(f"{name} must be an int, got {v!r}")
            if v < 1:
                raise ValueError(f"{name} must be >= 1, got {v}")

    @property
    def tokens(self) -> int:
        """Rows of the flattened input, ``b*s``."""
        return self.b * self.s

    def to_dict(self) -> dict:
        return {"b": self.b, "s": self.s, "i": self.i, "o": self.o, "r": self.r}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeConfig":
        return cls(d["b"], d["s"], d["i"], d["o"], d["r"])


class VariantId(str, enum.Enum):
    F1 = "F1"
    F2 = "F2"
    B1 = "B1"
    B2 = "B2"
    B3 = "B3"
    B4 = "B4"
    B5 = "B5"
    B6 = "B6"
    B7 = "B7"
    B8 = "B8"

    @property
    def kind(self) -> str:
        return "forward" if self.value[0] == "F" else "backward"

    @property
    def index(self) -> int:
        return int(self.value[1:])

    @property
    def executable(self) -> bool:
        # B6 is dominated by B5 and B7/B8 cost the same as B3; they exist
        # for cost queries only.
        return self.kind == "forward" or self.index <= 5

    @property
    def long_name(self) -> str:
        return f"{self.kind}{self.index}"


FORWARD_VARIANTS = (VariantId.F1, VariantId.F2)
BACKWARD_VARIANTS = tuple(VariantId(f"B{k}") for k in range(1, 9))
EXECUTABLE_BACKWARD = BACKWARD_VARIANTS[:5]


def flops_forward(v: VariantId, c: ShapeConfig) -> int:
    v = VariantId(v)
    n, i, o, r = c.tokens, c.i, c.o, c.r
    if v is VariantId.F1:
        # XW + (XA)B
        return _checked(2 * n * (i * o + r * i + o * r))
    if v is VariantId.F2:
        # X(W + AB)
        return _checked(2 * (i * o * r + n * o * i))
    raise UnsupportedVariantError(f"{v.value} is not a forward variant")


def flops_backward(v: VariantId, c: ShapeConfig) -> int:
    """FLOPs of backward variant ``v`` as tabulated for B1..B8.

    B6 keeps its tabulated ``4*i*o*r`` constant term even though a direct
    count of its products gives ``2*i*o*r``; it is never executed.
    """
    v = VariantId(v)
    n, i, o, r = c.tokens, c.i, c.o, c.r
    ior = i * o * r
    if v is VariantId.B1:
        total = 2 * n * (2 * o * r + 3 * i * r + o * i)
    elif v is VariantId.B2:
        total = 2 * n * (o * r + 2 * i * r + 2 * i * o) + 2 * ior
    elif v is VariantId.B3:
        total = 2 * n * (2 * i * o + o * r + i * r) + 4 * ior
    elif v is VariantId.B4:
        total = 2 * (2 * n * i * o + 3 * ior)
    elif v is VariantId.B5:
        total = 2 * n * (2 * o * r + 2 * i * r + o * i) + 2 * ior
    elif v is VariantId.B6:
        total = 2 * n * (2 * o * r + 2 * i * r + 2 * o * i) + 4 * ior
    elif v in (VariantId.B7, VariantId.B8):
        total = 2 * n * (o * r + i * r + 2 * o * i) + 4 * ior
    else:
        raise UnsupportedVariantError(f"{v.value} is not a backward variant")
    return _checked(total)


def flops(v: VariantId, c: ShapeConfig) -> int:
    v = VariantId(v)
    return flops_forward(v, c) if v.kind == "forward" else flops_backward(v, c)


def param_reduction_holds(c: ShapeConfig) -> bool:
    """True when the adapter has fewer parameters than the layer: r(i+o) < io."""
    return c.r * (c.i + c.o) < c.i * c.o


def workspace_elements(v: VariantId, c: ShapeConfig) -> int:
    """Elements held in temporaries while variant ``v`` runs.

    Only intermediates are counted, never operands or outputs.
    """
    v = VariantId(v)
    if not v.executable:
        raise UnsupportedVariantError(f"{v.value} is a cost-model-only variant")
    nr = c.tokens * c.r
    io = c.i * c.o
    table = {
        VariantId.F1: nr,
        VariantId.F2: io,
        VariantId.B1: 2 * nr,
        VariantId.B2: nr + io,
        VariantId.B3: nr + io,
        VariantId.B4: 2 * io,
        VariantId.B5: 2 * nr + io,
    }
    return _checked(table[v])


def activation_memory_saved(c: ShapeConfig, bytes_per_element: int) -> int:
    """Bytes per adapted layer of the cached ``XA`` activation that is not kept.

    A lower bound: optimizer state and mixed-precision copies are ignored.
    """
    if bytes_per_element < 0:
        raise ValueError("bytes_per_element must be >= 0")
    return _checked(c.tokens * c.r * bytes_per_element)


class BaselineCosts(NamedTuple):
    forward_flops: int
    backward_flops: int
    saved_activation_elements: int


def baseline_costs(c: ShapeConfig) -> BaselineCosts:
    """Costs of the default autograd path.

    Forward runs F1 and keeps ``XA``; backward runs B1 but reuses the kept
    ``XA`` instead of recomputing it.
    """
    fwd = flops_forward(VariantId.F1, c)
    bwd = flops_backward(VariantId.B1, c) - 2 * c.tokens * c.i * c.r
    return BaselineCosts(fwd, bwd, _checked(c.tokens * c.r))


@dataclass
class CostReport:
    """Everything the cost model knows about one shape, keyed by long variant
    names (``forward1`` ... ``backward8``)."""

    shape: ShapeConfig
    forward_flops: dict[str, int]
    backward_flops: dict[str, int]
    workspace: dict[str, int]
    baseline: BaselineCosts
    activation_elements_saved: int
    param_reduction: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "shape": self.shape.to_dict(),
            "forward_flops": dict(self.forward_flops),
            "backward_flops": dict(self.backward_flops),
            "workspace": dict(self.workspace),
            "baseline": self.baseline._asdict(),
            "activation_elements_saved": self.activation_elements_saved,
            "param_reduction": self.param_reduction,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostReport":
        return cls(
            shape=ShapeConfig.from_dict(d["shape"]),
            forward_flops=dict(d["forward_flops"]),
            backward_flops=dict(d["backward_flops"]),
            workspace=dict(d["workspace"]),
            baseline=BaselineCosts(**d["baseline"]),
            activation_elements_saved=d["activation_elements_saved"],
            param_reduction=d["param_reduction"],
            notes=list(d.get("notes", [])),
        )


def cost_report(c: ShapeConfig) -> CostReport:
    executable = [v for v in FORWARD_VARIANTS + BACKWARD_VARIANTS if v.executable]
    notes = []
    if not param_reduction_holds(c):
        notes.append("parameter reduction r(i+o) < io does not hold for this shape")
    return CostReport(
        shape=c,
        forward_flops={v.long_name: flops_forward(v, c) for v in FORWARD_VARIANTS},
        backward_flops={v.long_name: flops_backward(v, c) for v in BACKWARD_VARIANTS},
        workspace={v.long_name: workspace_elements(v, c) for v in executable},
        baseline=baseline_costs(c),
        activation_elements_saved=c.tokens * c.r,
        param_reduction=param_reduction_holds(c),
        notes=notes,
    )
