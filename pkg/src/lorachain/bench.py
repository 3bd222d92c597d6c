"""Desk-scale timing of LoRA graph variants.

Timings come from ``time.perf_counter_ns`` around the variant body only;
operand creation is excluded.  Only one measurement session may run per
process at a time, and ``single_thread`` pins BLAS to one thread for the
duration of the session.
"""

from __future__ import annotations

import contextlib
import os
import statistics
import threading
import time
from dataclasses import asdict, dataclass, field

from threadpoolctl import threadpool_limits

from .costmodel import (ShapeConfig, UnsupportedVariantError, VariantId, baseline_costs,
                        flops_backward, flops_forward)
from .dense import HIGH, SINGLE, fill_random
from .variants import (LoraLayer, backward, baseline_backward, baseline_forward,
                       forward)

THREADS_ENV = "LORACHAIN_NUM_THREADS"


class MeasurementError(RuntimeError):
    pass


class SessionBusyError(RuntimeError):
    pass


class ResourceError(MemoryError):
    pass


@dataclass(frozen=True)
class BenchConfig:
    warmup_iters: int = 2
    repeat_iters: int = 7
    seed: int = 0
    precision: str = "single"
    single_thread: bool = True

    def __post_init__(self):
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        if self.repeat_iters < 3:
            raise ValueError("repeat_iters must be >= 3")
        if self.precision not in ("high", "single"):
            raise ValueError(f"precision must be 'high' or 'single', got {self.precision!r}")

    @property
    def dtype(self):
        return HIGH if self.precision == "high" else SINGLE


@dataclass
class TimingStats:
    """Durations in nanoseconds."""

    median: float
    mean: float
    std: float
    min: float
    samples: int
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_samples(cls, samples: list[int]) -> "TimingStats":
        stats = cls(
            median=float(statistics.median(samples)),
            mean=float(statistics.fmean(samples)),
            std=float(statistics.pstdev(samples)),
            min=float(min(samples)),
            samples=len(samples),
        )
        res_ns = clock_resolution_ns()
        if res_ns > stats.median / 100:
            stats.warnings.append(
                f"clock resolution {res_ns:.0f} ns is coarser than 1% of the median")
        return stats

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TimingStats":
        return cls(**d)


def clock_resolution_ns() -> float:
    return time.get_clock_info("perf_counter").resolution * 1e9


_SESSION = threading.Lock()


@contextlib.contextmanager
def measurement_session(single_thread: bool = True):
    """Exclusive timing session; raises ``SessionBusyError`` if one is active."""
    if not _SESSION.acquire(blocking=False):
        raise SessionBusyError("another measurement session is running")
    try:
        if single_thread:
            with threadpool_limits(limits=1):
                yield
        else:
            yield
    finally:
        _SESSION.release()


def thread_limit_from_env():
    """Context manager honouring ``LORACHAIN_NUM_THREADS`` (no-op when unset)."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    return threadpool_limits(limits=int(raw))


def make_problem(c: ShapeConfig, seed: int, dtype=HIGH, signed: bool = True):
    """Seeded operands ``(X, layer, dY)`` for shape ``c``.

    Operand ``k`` (X, W, A, B, dY in that order) is filled with seed
    ``[seed, k]``.  With ``signed=False`` entries are folded into [0, 1],
    which keeps every product free of cancellation.
    """
    n = c.tokens
    dims = [(n, c.i), (c.i, c.o), (c.i, c.r), (c.r, c.o), (n, c.o)]
    try:
        mats = [fill_random(rows, cols, [seed, k], dtype=dtype)
                for k, (rows, cols) in enumerate(dims)]
    except MemoryError as exc:
        raise ResourceError(f"cannot allocate operands for {c}") from exc
    if not signed:
        mats = [abs(m) for m in mats]
    X, W, A, B, dY = mats
    return X, LoraLayer(W, A, B), dY


def _sample(body) -> int:
    start = time.perf_counter_ns()
    body()
    end = time.perf_counter_ns()
    if end < start:
        raise MeasurementError("clock went backwards")
    if end == start:
        raise MeasurementError("zero-duration sample; timer resolution too coarse")
    return end - start


def _variant_body(v, X, layer, dY):
    v = VariantId(v)
    if not v.executable:
        raise UnsupportedVariantError(f"{v.value} cannot be executed")
    if v.kind == "forward":
        return lambda: forward(v, X, layer)
    return lambda: backward(v, X, layer, dY)


def _time_body(body, cfg: BenchConfig) -> TimingStats:
    try:
        for _ in range(cfg.warmup_iters):
            body()
        samples = [_sample(body) for _ in range(cfg.repeat_iters)]
    except MemoryError as exc:
        raise ResourceError("allocation failed while timing") from exc
    return TimingStats.from_samples(samples)


def time_variant(v: VariantId, c: ShapeConfig, cfg: BenchConfig) -> TimingStats:
    with measurement_session(cfg.single_thread):
        return time_variant_in_session(v, c, cfg)


def time_variant_in_session(v: VariantId, c: ShapeConfig, cfg: BenchConfig) -> TimingStats:
    """``time_variant`` for callers already holding the session."""
    X, layer, dY = make_problem(c, cfg.seed, cfg.dtype)
    return _time_body(_variant_body(v, X, layer, dY), cfg)


@dataclass
class SpeedupReport:
    shape: ShapeConfig
    forward_choice: VariantId
    backward_choice: VariantId
    plan: TimingStats
    baseline: TimingStats
    measured_speedup_pct: float
    measured_speedup_mean_pct: float
    plan_flops: int
    baseline_flops: int
    predicted_speedup_pct: float

    def to_dict(self) -> dict:
        return {
            "shape": self.shape.to_dict(),
            "forward_choice": self.forward_choice.value,
            "backward_choice": self.backward_choice.value,
            "plan": self.plan.to_dict(),
            "baseline": self.baseline.to_dict(),
            "measured_speedup_pct": self.measured_speedup_pct,
            "measured_speedup_mean_pct": self.measured_speedup_mean_pct,
            "plan_flops": self.plan_flops,
            "baseline_flops": self.baseline_flops,
            "predicted_speedup_pct": self.predicted_speedup_pct,
        }


def predicted_flops(c: ShapeConfig, forward_choice: VariantId,
                    backward_choice: VariantId) -> tuple[int, int]:
    """``(plan_total, baseline_total)`` FLOPs of one forward+backward loop."""
    base = baseline_costs(c)
    plan_total = flops_forward(forward_choice, c) + flops_backward(backward_choice, c)
    return plan_total, base.forward_flops + base.backward_flops


def compare_to_baseline(c: ShapeConfig, plan, cfg: BenchConfig) -> SpeedupReport:
    """Time one forward+backward loop for ``plan`` against the caching baseline.

    Plan and baseline samples are interleaved so slow drift in machine
    load hits both equally.
    """
    fwd = VariantId(plan.forward_choice)
    bwd = VariantId(plan.backward_choice)
    if not (fwd.executable and bwd.executable):
        raise UnsupportedVariantError("plan contains a non-executable variant")

    with measurement_session(cfg.single_thread):
        X, layer, dY = make_problem(c, cfg.seed, cfg.dtype)

        def plan_loop():
            forward(fwd, X, layer)
            backward(bwd, X, layer, dY)

        def baseline_loop():
            _, xa = baseline_forward(X, layer)
            baseline_backward(X, layer, dY, xa)

        try:
            for _ in range(cfg.warmup_iters):
                plan_loop()
                baseline_loop()
            plan_samples, base_samples = [], []
            for _ in range(cfg.repeat_iters):
                plan_samples.append(_sample(plan_loop))
                base_samples.append(_sample(baseline_loop))
        except MemoryError as exc:
            raise ResourceError("allocation failed while timing") from exc

    plan_stats = TimingStats.from_samples(plan_samples)
    base_stats = TimingStats.from_samples(base_samples)
    plan_total, base_total = predicted_flops(c, fwd, bwd)
    return SpeedupReport(
        shape=c,
        forward_choice=fwd,
        backward_choice=bwd,
        plan=plan_stats,
        baseline=base_stats,
        measured_speedup_pct=_pct(base_stats.median, plan_stats.median),
        measured_speedup_mean_pct=_pct(base_stats.mean, plan_stats.mean),
        plan_flops=plan_total,
        baseline_flops=base_total,
        predicted_speedup_pct=_pct(base_total, plan_total),
    )


def _pct(baseline, candidate) -> float:
    return (baseline - candidate) / baseline * 100.0
