"""Pick the cheapest forward/backward pair for a layer geometry.

Two criteria are offered and never mixed: exact FLOP counts, or measured
median time at a desk-scale shape.  Forward and backward are chosen
independently because they share no state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from . import bench
from .costmodel import (EXECUTABLE_BACKWARD, FORWARD_VARIANTS, ShapeConfig, VariantId,
                        activation_memory_saved, baseline_costs, flops, param_reduction_holds)

CRITERIA = ("flops", "time")


@dataclass
class PairPlan:
    shape: ShapeConfig
    forward_choice: VariantId
    backward_choice: VariantId
    criterion: str
    evidence: dict
    parameter_reduction: bool
    name: str | None = None

    def to_dict(self) -> dict:
        evidence = {k: (v.to_dict() if isinstance(v, bench.TimingStats) else v)
                    for k, v in self.evidence.items()}
        return {
            "name": self.name,
            "shape": self.shape.to_dict(),
            "forward_choice": self.forward_choice.value,
            "backward_choice": self.backward_choice.value,
            "criterion": self.criterion,
            "evidence": evidence,
            "parameter_reduction": self.parameter_reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PairPlan":
        evidence = {k: (bench.TimingStats.from_dict(v) if isinstance(v, dict) else v)
                    for k, v in d["evidence"].items()}
        return cls(
            shape=ShapeConfig.from_dict(d["shape"]),
            forward_choice=VariantId(d["forward_choice"]),
            backward_choice=VariantId(d["backward_choice"]),
            criterion=d["criterion"],
            evidence=evidence,
            parameter_reduction=d["parameter_reduction"],
            name=d.get("name"),
        )


def _argmin_flops(candidates, c):
    return min(candidates, key=lambda v: (flops(v, c), v.index))


def select_by_flops(c: ShapeConfig) -> PairPlan:
    evidence = {v.value: flops(v, c) for v in FORWARD_VARIANTS + EXECUTABLE_BACKWARD}
    return PairPlan(
        shape=c,
        forward_choice=_argmin_flops(FORWARD_VARIANTS, c),
        backward_choice=_argmin_flops(EXECUTABLE_BACKWARD, c),
        criterion="flops",
        evidence=evidence,
        parameter_reduction=param_reduction_holds(c),
    )


def pick_by_time(candidates: Iterable[VariantId], stats: dict, c: ShapeConfig,
                 resolution_ns: float) -> VariantId:
    """Fastest median; medians within ``2 * resolution_ns`` of it count as ties.

    Ties go to the fewer-FLOP variant, then the lower index.
    """
    candidates = list(candidates)
    best = min(stats[v.value].median for v in candidates)
    tied = [v for v in candidates if stats[v.value].median - best <= 2 * resolution_ns]
    return _argmin_flops(tied, c)


def select_by_time(c: ShapeConfig, cfg: bench.BenchConfig) -> PairPlan:
    """Time each executable variant on seeded operands and keep the fastest pair."""
    stats = {}
    with bench.measurement_session(cfg.single_thread):
        for v in FORWARD_VARIANTS + EXECUTABLE_BACKWARD:
            stats[v.value] = bench.time_variant_in_session(v, c, cfg)
    res = bench.clock_resolution_ns()
    if res <= 0:
        raise bench.MeasurementError("clock reports a non-positive resolution")
    return PairPlan(
        shape=c,
        forward_choice=pick_by_time(FORWARD_VARIANTS, stats, c, res),
        backward_choice=pick_by_time(EXECUTABLE_BACKWARD, stats, c, res),
        criterion="time",
        evidence=stats,
        parameter_reduction=param_reduction_holds(c),
    )


def select(c: ShapeConfig, criterion: str = "flops", cfg: bench.BenchConfig | None = None) -> PairPlan:
    if criterion == "flops":
        return select_by_flops(c)
    if criterion == "time":
        return select_by_time(c, cfg or bench.BenchConfig())
    raise ValueError(f"unknown criterion {criterion!r}; expected one of {CRITERIA}")


def plan_model(layers, b: int, s: int, r: int, criterion: str = "flops",
               cfg: bench.BenchConfig | None = None) -> list[PairPlan]:
    """One plan per ``(name, in_features, out_features)`` record, in input order."""
    plans = []
    for name, i, o in layers:
        plan = select(ShapeConfig(b, s, i, o, r), criterion, cfg)
        plans.append(replace(plan, name=name))
    return plans


def plan_totals(plans: list[PairPlan], bytes_per_element: int = 4) -> dict:
    """Aggregate FLOPs and memory of a model plan against the caching baseline."""
    plan_flops = base_flops = saved_elems = saved_bytes = 0
    for p in plans:
        base = baseline_costs(p.shape)
        plan_flops += flops(p.forward_choice, p.shape) + flops(p.backward_choice, p.shape)
        base_flops += base.forward_flops + base.backward_flops
        saved_elems += base.saved_activation_elements
        saved_bytes += activation_memory_saved(p.shape, bytes_per_element)
    return {
        "layers": len(plans),
        "plan_flops": plan_flops,
        "baseline_flops": base_flops,
        "flops_delta": base_flops - plan_flops,
        "predicted_speedup_pct": (base_flops - plan_flops) / base_flops * 100.0 if plans else 0.0,
        "activation_elements_saved": saved_elems,
        "activation_bytes_saved": saved_bytes,
        "bytes_per_element": bytes_per_element,
        "layers_without_param_reduction": [p.name for p in plans if not p.parameter_reduction],
    }
