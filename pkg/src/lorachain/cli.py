"""``lorachain`` command line.

Exit codes: 0 ok, 2 usage, 3 overflow/numeric/measurement, 4 failed
verification, 5 I/O.  Set ``LORACHAIN_NUM_THREADS`` to pin the BLAS thread
count for a run.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import bench, checks, mapgen, selector
from .costmodel import FlopOverflowError, ShapeConfig, cost_report
from .variants import NumericError

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_VERIFY, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _emit_json(doc):
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")


def _add_shape(p):
    for name in ("b", "s", "i", "o", "r"):
        p.add_argument(f"--{name}", type=int, required=True)


def _shape(args) -> ShapeConfig:
    try:
        return ShapeConfig(args.b, args.s, args.i, args.o, args.r)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _bench_config(args) -> bench.BenchConfig:
    try:
        return bench.BenchConfig(warmup_iters=args.warmup, repeat_iters=args.repeats,
                                 seed=args.seed, precision=args.precision,
                                 single_thread=args.single_thread)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_bench_opts(p):
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--repeats", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", choices=("high", "single"), default="single")
    p.add_argument("--single-thread", action="store_true")


def _range(text):
    try:
        start, stop, step = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    return start, stop, step


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lorachain",
                                 description="Cost model and graph selection for LoRA layers.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flops", help="FLOP, workspace and memory report for one shape")
    _add_shape(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("select", help="best forward/backward pair for one shape")
    _add_shape(p)
    p.add_argument("--criterion", choices=selector.CRITERIA, default="flops")
    _add_bench_opts(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("plan", help="plan every layer listed in a JSON file")
    p.add_argument("--layers", required=True)
    for name in ("b", "s", "r"):
        p.add_argument(f"--{name}", type=int)
    p.add_argument("--criterion", choices=selector.CRITERIA, default="flops")
    p.add_argument("--bytes-per-element", type=int, default=4)
    _add_bench_opts(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("verify", help="run gradient, dominance and FLOP-audit checks")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=checks.GRAD_TOL)
    p.add_argument("--fd-configs", type=int, default=20)
    p.add_argument("--dominance-samples", type=int, default=20000)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("bench", help="time the FLOP-selected pair against the caching baseline")
    _add_shape(p)
    _add_bench_opts(p)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("map", help="CSV grid of the best variant over two axes")
    p.add_argument("--axis", choices=("embed-rank", "batch-seq"), required=True)
    p.add_argument("--layer-rule", choices=mapgen.LAYER_RULES, default="square")
    p.add_argument("--which", choices=("forward", "backward"), default="backward")
    p.add_argument("--out", required=True)
    p.add_argument("--x-range", type=_range)
    p.add_argument("--y-range", type=_range)
    for name in ("b", "s", "i", "o", "r"):
        p.add_argument(f"--{name}", type=int)
    return ap


def _cmd_flops(args):
    report = cost_report(_shape(args))
    if args.json:
        _emit_json(report.to_dict())
        return EXIT_OK
    c = report.shape
    print(f"shape b={c.b} s={c.s} i={c.i} o={c.o} r={c.r}  "
          f"param_reduction={str(report.param_reduction).lower()}")
    print(f"{'variant':<8}{'flops':>22}{'workspace':>16}")
    for k, v in {**report.forward_flops, **report.backward_flops}.items():
        ws = report.workspace.get(k)
        print(f"{k:<8}{v:>22,}{'-' if ws is None else f'{ws:,}':>16}")
    b = report.baseline
    print(f"baseline forward {b.forward_flops:,}  backward {b.backward_flops:,}  "
          f"cached XA elements {b.saved_activation_elements:,}")
    return EXIT_OK


def _print_plan(plan):
    label = f"{plan.name}: " if plan.name else ""
    print(f"{label}forward {plan.forward_choice.value}  backward {plan.backward_choice.value}  "
          f"(criterion {plan.criterion}, param_reduction {str(plan.parameter_reduction).lower()})")


def _cmd_select(args):
    c = _shape(args)
    cfg = _bench_config(args) if args.criterion == "time" else None
    plan = selector.select(c, args.criterion, cfg)
    if not plan.parameter_reduction:
        _warn(f"r(i+o) < io does not hold for {c}; the adapter does not reduce parameters")
    if args.json:
        _emit_json(plan.to_dict())
        return EXIT_OK
    _print_plan(plan)
    for k, v in plan.evidence.items():
        shown = f"{v:,} flops" if isinstance(v, int) else f"median {v.median / 1e3:,.1f} us"
        print(f"  {k:<4}{shown}")
    return EXIT_OK


def load_layer_file(path):
    """Read a layer list: ``[{"name", "in", "out"}, ...]`` or
    ``{"defaults": {"b", "s", "r"}, "layers": [...]}``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from exc
    defaults = {}
    if isinstance(doc, dict):
        defaults = doc.get("defaults") or {}
        records = doc.get("layers")
    else:
        records = doc
    if not isinstance(records, list):
        raise UsageError(f"{path}: expected a list of layer records")
    layers = []
    for rec in records:
        try:
            name, i, o = rec["name"], rec["in"], rec["out"]
        except (KeyError, TypeError) as exc:
            raise UsageError(f"{path}: layer record needs name, in, out: {rec!r}") from exc
        if not isinstance(name, str) or not name:
            raise UsageError(f"{path}: layer names must be non-empty strings")
        if not all(isinstance(d, int) and not isinstance(d, bool) and d >= 1 for d in (i, o)):
            raise UsageError(f"{path}: layer {name!r} needs positive integer dims")
        layers.append((name, i, o))
    return layers, defaults


def _cmd_plan(args):
    layers, defaults = load_layer_file(args.layers)
    geo = {}
    for name in ("b", "s", "r"):
        val = getattr(args, name)
        geo[name] = val if val is not None else defaults.get(name)
        if geo[name] is None:
            raise UsageError(f"--{name} not given and not in the layer file defaults")
    cfg = _bench_config(args) if args.criterion == "time" else None
    try:
        plans = selector.plan_model(layers, geo["b"], geo["s"], geo["r"], args.criterion, cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    totals = selector.plan_totals(plans, args.bytes_per_element)
    for name in totals["layers_without_param_reduction"]:
        _warn(f"layer {name!r} does not satisfy r(i+o) < io")
    if args.json:
        _emit_json({"plans": [p.to_dict() for p in plans], "totals": totals})
        return EXIT_OK
    for p in plans:
        _print_plan(p)
    print(f"total flops {totals['plan_flops']:,} vs baseline {totals['baseline_flops']:,} "
          f"({totals['predicted_speedup_pct']:+.2f}%), activations saved "
          f"{totals['activation_bytes_saved']:,} bytes")
    return EXIT_OK


def _cmd_verify(args):
    results = checks.run_verification(args.trials, args.seed, args.tol,
                                      fd_configs=args.fd_configs,
                                      dominance_samples=args.dominance_samples)
    ok = all(r.passed for r in results)
    if args.json:
        _emit_json({"passed": ok, "checks": [r.to_dict() for r in results]})
    else:
        for r in results:
            print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_bench(args):
    c = _shape(args)
    cfg = _bench_config(args)
    plan = selector.select_by_flops(c)
    report = bench.compare_to_baseline(c, plan, cfg)
    for w in report.plan.warnings + report.baseline.warnings:
        _warn(w)
    if args.json:
        _emit_json(report.to_dict())
        return EXIT_OK
    print(f"plan {report.forward_choice.value}+{report.backward_choice.value}: "
          f"median {report.plan.median / 1e6:.3f} ms, mean {report.plan.mean / 1e6:.3f} ms")
    print(f"baseline F1+cached-XA B1: median {report.baseline.median / 1e6:.3f} ms, "
          f"mean {report.baseline.mean / 1e6:.3f} ms")
    print(f"measured speedup {report.measured_speedup_pct:+.2f}% (median), "
          f"{report.measured_speedup_mean_pct:+.2f}% (mean)")
    print(f"predicted speedup {report.predicted_speedup_pct:+.2f}% "
          f"({report.plan_flops:,} vs {report.baseline_flops:,} flops)")
    return EXIT_OK


def _cmd_map(args):
    if args.axis == "embed-rank":
        x_axis, y_axis = "embed", "rank"
    else:
        x_axis, y_axis = "batch", "seqlen"
    try:
        spec = mapgen.GridSpec(
            x_axis=x_axis, x_range=args.x_range or mapgen.DEFAULT_RANGES[x_axis],
            y_axis=y_axis, y_range=args.y_range or mapgen.DEFAULT_RANGES[y_axis],
            layer_rule=args.layer_rule, b=args.b, s=args.s, i=args.i, o=args.o, r=args.r)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    grid = mapgen.area_map(spec, args.which)
    mapgen.emit_csv(grid, args.out)
    invalid = sum(not c.valid for c in grid.cells)
    if invalid:
        _warn(f"{invalid} cells overflowed and were marked invalid")
    print(f"wrote {len(grid.cells)} cells to {args.out}", file=sys.stderr)
    return EXIT_OK


_COMMANDS = {
    "flops": _cmd_flops,
    "select": _cmd_select,
    "plan": _cmd_plan,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
    "map": _cmd_map,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with bench.thread_limit_from_env():
            return _COMMANDS[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FlopOverflowError, NumericError, bench.MeasurementError,
            bench.SessionBusyError, bench.ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
