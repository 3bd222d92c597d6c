"""Self-verification: gradient equivalence, finite differences, FLOP dominance
and an instrumented FLOP audit.  Backs the ``verify`` command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costmodel import (EXECUTABLE_BACKWARD, FORWARD_VARIANTS, ShapeConfig, VariantId,
                        flops_backward, flops_forward, param_reduction_holds,
                        workspace_elements)
from .dense import REL_EPS, FlopCounter, max_rel_diff
from .bench import make_problem
from .variants import backward, finite_difference_check, forward, reference_backward

GRAD_TOL = 1e-10
FORWARD_TOL = 1e-12
FD_TOL = 1e-6
FD_STEP = 1e-5

AUDIT_SHAPES = (
    ShapeConfig(1, 1, 1, 1, 1),
    ShapeConfig(2, 3, 5, 7, 2),
    ShapeConfig(1, 8, 16, 4, 3),
    ShapeConfig(3, 5, 6, 24, 8),
    ShapeConfig(4, 4, 32, 32, 16),
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def random_small_shape(rng: np.random.Generator, max_dim: int = 64, max_tokens: int = 64) -> ShapeConfig:
    b = int(rng.integers(1, min(8, max_tokens) + 1))
    s = int(rng.integers(1, max_tokens // b + 1))
    i, o, r = (int(v) for v in rng.integers(1, max_dim + 1, size=3))
    return ShapeConfig(b, s, i, o, r)


def normwise_rel_diff(a, b) -> float:
    """``max|a - b| / max|b|``; insensitive to cancellation in single entries."""
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), REL_EPS))


def gradient_equivalence(trials: int, seed: int) -> dict[str, float]:
    """Worst backward-vs-reference and F1-vs-F2 differences over random configs.

    Elementwise relative differences are taken on nonnegative operands,
    where no output entry is a cancelling sum.  Signed operands are
    compared normwise, since an entry that cancels to near zero has an
    unbounded elementwise relative error under any bracketing.
    """
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(("backward", "forward", "backward_signed", "forward_signed"), 0.0)
    for t in range(trials):
        c = random_small_shape(rng)
        for signed in (False, True):
            X, layer, dY = make_problem(c, seed=[seed, t], signed=signed)
            metric = normwise_rel_diff if signed else max_rel_diff
            suffix = "_signed" if signed else ""
            ref = reference_backward(X, layer, dY)
            for v in EXECUTABLE_BACKWARD:
                for g, r in zip(backward(v, X, layer, dY), ref):
                    worst["backward" + suffix] = max(worst["backward" + suffix], metric(g, r))
            f1 = forward(VariantId.F1, X, layer)
            f2 = forward(VariantId.F2, X, layer)
            worst["forward" + suffix] = max(worst["forward" + suffix], metric(f2, f1))
    return worst


def finite_difference_suite(configs: int, seed: int, h: float = FD_STEP) -> float:
    rng = np.random.default_rng(seed + 7)
    worst = 0.0
    for t in range(configs):
        c = random_small_shape(rng, max_dim=6, max_tokens=6)
        X, layer, G = make_problem(c, seed=[seed, 7919, t])
        for v in EXECUTABLE_BACKWARD:
            errs = finite_difference_check(X, layer, G, h=h, variant=v)
            worst = max(worst, *errs.values())
    return worst


def random_reducing_shapes(n: int, seed: int, max_dim: int = 16384, max_tokens: int = 65536):
    """``n`` random shapes satisfying r(i+o) < io."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        i, o = (int(v) for v in rng.integers(2, max_dim + 1, size=2))
        r_max = -(-i * o // (i + o)) - 1  # largest r with r(i+o) < io
        if r_max < 1:
            continue
        r = int(rng.integers(1, r_max + 1))
        b = int(rng.integers(1, 257))
        s = int(rng.integers(1, max_tokens // b + 1))
        out.append(ShapeConfig(b, s, i, o, r))
    return out


def random_shapes(n: int, seed: int, max_dim: int = 16384):
    rng = np.random.default_rng(seed)
    vals = rng.integers(1, max_dim + 1, size=(n, 5))
    return [ShapeConfig(*(int(v) for v in row)) for row in vals]


def dominance_violations(samples: int, seed: int) -> dict[str, int]:
    """Counterexample counts for each dominance/equality claim."""
    counts = {"B2>B5": 0, "B3>B5": 0, "B6>B5": 0, "B7=B8=B3": 0}
    for c in random_reducing_shapes(samples, seed):
        assert param_reduction_holds(c)
        b5 = flops_backward(VariantId.B5, c)
        counts["B2>B5"] += not flops_backward(VariantId.B2, c) > b5
        counts["B3>B5"] += not flops_backward(VariantId.B3, c) > b5
    for c in random_shapes(samples, seed + 1):
        b3 = flops_backward(VariantId.B3, c)
        counts["B6>B5"] += not flops_backward(VariantId.B6, c) > flops_backward(VariantId.B5, c)
        counts["B7=B8=B3"] += not (flops_backward(VariantId.B7, c)
                                   == flops_backward(VariantId.B8, c) == b3)
    return counts


def flop_audit(shapes=AUDIT_SHAPES) -> list[str]:
    """Executed vs analytic FLOPs and workspace; returns mismatch descriptions."""
    problems = []
    for c in shapes:
        X, layer, dY = make_problem(c, seed=0)
        for v in FORWARD_VARIANTS + EXECUTABLE_BACKWARD:
            counter = FlopCounter()
            if v.kind == "forward":
                forward(v, X, layer, counter=counter)
                expected = flops_forward(v, c)
            else:
                backward(v, X, layer, dY, counter=counter)
                expected = flops_backward(v, c)
            if counter.flops != expected:
                problems.append(f"{v.value} at {c}: executed {counter.flops}, table {expected}")
            if counter.workspace != workspace_elements(v, c):
                problems.append(f"{v.value} at {c}: workspace {counter.workspace}, "
                                f"model {workspace_elements(v, c)}")
    return problems


def run_verification(trials: int = 200, seed: int = 0, tol: float = GRAD_TOL,
                     fd_configs: int = 20, dominance_samples: int = 20000) -> list[CheckResult]:
    results = []
    eq = gradient_equivalence(trials, seed)
    for key, limit in (("backward", tol), ("forward", FORWARD_TOL),
                       ("backward_signed", tol), ("forward_signed", FORWARD_TOL)):
        metric = "normwise" if key.endswith("signed") else "elementwise"
        results.append(CheckResult(f"{key.replace('_', '-')}-equivalence", eq[key] <= limit,
                                   f"{trials} configs, worst {metric} rel diff "
                                   f"{eq[key]:.3e} (tol {limit:.0e})"))
    fd = finite_difference_suite(fd_configs, seed)
    results.append(CheckResult("finite-difference", fd <= FD_TOL,
                               f"{fd_configs} configs, worst rel err {fd:.3e} (tol {FD_TOL:.0e})"))
    viol = dominance_violations(dominance_samples, seed)
    results.append(CheckResult("dominance", not any(viol.values()),
                               f"{dominance_samples} shapes per claim, violations {viol}"))
    audit = flop_audit()
    results.append(CheckResult("flop-audit", not audit,
                               "; ".join(audit) if audit else f"{len(AUDIT_SHAPES)} shapes exact"))
    return results
