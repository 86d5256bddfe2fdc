"""Command-line interface.

Every command takes a model config, given either as a positional argument
(a preset name like ``nano`` or a path to a YAML file) or via ``--config``;
supplying both, or neither, is a usage error.

Exit codes: 0 success, 1 a validation or equivalence check failed,
2 usage error, 3 file I/O failure (including checksum mismatches).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import PRESET_NAMES, resolve_config, spec_hash
from .errors import MhafError, WeightFileError
from .ghfks import KernelPlan, default_plan, rf_report, uniform_plan
from .graph import (
    assemble,
    count_params_flops,
    export_graph,
    shape_infer,
    validate_model,
)
from .model import benchmark_forward, forward, fuse_model
from .records import format_records
from .reparam import RepHConvSpec, verify_equivalence
from .weights import init_weights, load_weights, save_weights, validate_store

__all__ = ["main"]


def _add_config_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "config",
        nargs="?",
        help=f"preset name ({', '.join(PRESET_NAMES)}) or path to a YAML config",
    )
    sub.add_argument(
        "--config",
        dest="config_path",
        metavar="PATH",
        help="alternative to the positional config argument",
    )


def _add_format_arg(sub: argparse.ArgumentParser, choices=("text", "records")) -> None:
    sub.add_argument(
        "--format",
        choices=choices,
        default=choices[0],
        help=f"output format (default {choices[0]})",
    )


def _add_out_arg(sub: argparse.ArgumentParser, required=False, what="report") -> None:
    sub.add_argument(
        "--out",
        metavar="FILE",
        required=required,
        help=f"write the {what} to FILE" + ("" if required else " instead of stdout"),
    )


def _add_uniform_arg(sub: argparse.ArgumentParser) -> None:
    sub.add_argument(
        "--uniform",
        type=int,
        metavar="K",
        help="use a uniform KxK kernel plan instead of the default schedule",
    )


def _resolve_spec(args):
    positional, flagged = args.config, args.config_path
    if (positional is None) == (flagged is None):
        args.parser.error("give a config either positionally or with --config, not both")
    return resolve_config(positional if positional is not None else flagged)


def _plan_from(args) -> KernelPlan:
    if getattr(args, "uniform", None) is not None:
        return uniform_plan(args.uniform)
    return default_plan()


def _emit(args, text: str) -> None:
    if getattr(args, "out", None):
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _seeded_inputs(seed: int, count: int, size: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        yield rng.standard_normal((1, 3, size, size)).astype(np.float32)


# ---------------------------------------------------------------------------
# commands


def _cmd_validate(args) -> int:
    spec = _resolve_spec(args)
    checks = validate_model(spec, _plan_from(args))
    if args.format == "records":
        _emit(args, format_records(
            {"type": "check", "name": c.name, "passed": c.passed, "detail": c.detail}
            for c in checks
        ))
    else:
        lines = [
            f"[ {'pass' if c.passed else 'FAIL'} ] {c.name}: {c.detail}"
            for c in checks
        ]
        failed = sum(1 for c in checks if not c.passed)
        if failed:
            lines.append(f"{failed} of {len(checks)} checks failed")
        else:
            lines.append(f"all {len(checks)} checks passed")
        _emit(args, "\n".join(lines) + "\n")
    return 0 if all(c.passed for c in checks) else 1


def _cmd_shapes(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec)
    size = args.input or spec.input_size
    shapes = shape_infer(graph, size)
    totals = count_params_flops(graph, size)
    if args.format == "records":
        recs = [
            {"type": "shape", "node": name, "kind": graph.node(name).kind,
             "channels": c, "height": h, "width": w}
            for name, (c, h, w) in shapes.items()
        ]
        recs.append({"type": "totals", "input_size": size,
                     "params": totals.params, "flops": totals.flops})
        _emit(args, format_records(recs))
    else:
        name_w = max(len(n) for n in shapes)
        lines = [
            f"{name:<{name_w}}  {graph.node(name).kind:<8}  {c}x{h}x{w}"
            for name, (c, h, w) in shapes.items()
        ]
        lines.append("")
        lines.append(
            f"params {totals.params:,}  flops {totals.flops:,} "
            f"({totals.flops / 1e9:.2f} GFLOPs at {size}x{size})"
        )
        _emit(args, "\n".join(lines) + "\n")
    return 0


def _cmd_plan(args) -> int:
    _resolve_spec(args)  # config is accepted for interface consistency
    plan = _plan_from(args)
    problem = None
    try:
        plan.validate()
    except MhafError as exc:
        problem = str(exc)
    if args.format == "records":
        recs = [{"type": "kernel", "slot": f"backbone.{lv}", "kernel": k}
                for lv, k in plan.backbone.items()]
        recs += [{"type": "kernel", "slot": f"neck.{pw}.{lv}", "kernel": k}
                 for pw in plan.neck for lv, k in plan.neck[pw].items()]
        recs.append({"type": "schedule", "passed": problem is None,
                     "detail": problem or "schedule holds"})
        _emit(args, format_records(recs))
    else:
        lines = ["backbone  " + "  ".join(f"{lv}:{k}" for lv, k in plan.backbone.items())]
        for pw in plan.neck:
            lines.append(f"{pw:<8}  " + "  ".join(f"{lv}:{k}" for lv, k in plan.neck[pw].items()))
        lines.append(f"schedule: {problem or 'ok'}")
        _emit(args, "\n".join(lines) + "\n")
    return 0 if problem is None else 1


def _cmd_rf(args) -> int:
    spec = _resolve_spec(args)
    entries = rf_report(assemble(spec, _plan_from(args)))
    if args.format == "records":
        _emit(args, format_records(
            {"type": "rf", **e.to_record()} for e in entries
        ))
    else:
        lines = [f"{e.node}  stride {e.stride:<3} rf {e.rf}" for e in entries]
        _emit(args, "\n".join(lines) + "\n")
    return 0


def _cmd_export(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec, _plan_from(args))
    if args.format == "records":
        _emit(args, format_records(export_graph(graph, "records")))
    else:
        _emit(args, export_graph(graph, "dot"))
    return 0


def _cmd_init(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec)
    store = init_weights(graph, seed=args.seed)
    save_weights(store, args.out)
    size = os.path.getsize(args.out)
    if args.format == "records":
        text = format_records([{
            "type": "init", "path": args.out, "entries": len(store.entries),
            "bytes": size, "seed": args.seed, "config": store.spec_digest,
        }])
    else:
        text = (
            f"wrote {args.out}: {len(store.entries)} entries, {size:,} bytes, "
            f"seed {args.seed}, config {store.spec_digest}\n"
        )
    sys.stdout.write(text)
    return 0


def _cmd_fuse(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec)
    if args.weights:
        store = load_weights(args.weights)
    else:
        store = init_weights(graph, seed=args.seed)
    validate_store(graph, store)
    outcome = fuse_model(graph, store)
    deviation = 0.0
    for x in _seeded_inputs(args.seed, args.trials, args.input):
        before = forward(graph, store, x)
        after = forward(outcome.graph, outcome.store, x)
        for level in before:
            deviation = max(deviation, float(np.max(np.abs(before[level] - after[level]))))
    passed = deviation <= args.tol
    if passed:
        save_weights(outcome.store, args.out)
    if args.format == "records":
        text = format_records([{
            "type": "fusion", "bn_nodes_removed": outcome.bn_nodes_removed,
            "floats_before": outcome.params_before,
            "floats_after": outcome.params_after,
            "trials": args.trials, "input_size": args.input,
            "max_deviation": deviation, "tolerance": args.tol,
            "passed": passed, "out": args.out if passed else None,
        }])
    else:
        lines = [
            f"folded {outcome.bn_nodes_removed} normalization nodes into conv weights",
            f"weight floats: {outcome.params_before:,} -> {outcome.params_after:,}",
            f"max deviation over {args.trials} inputs at {args.input}x{args.input}: "
            f"{deviation:.2e} (tolerance {args.tol:.0e})",
        ]
        if passed:
            lines.append(f"wrote {args.out}")
        else:
            lines.append("deviation exceeds tolerance; nothing written")
        text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    return 0 if passed else 1


def _cmd_verify(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec, _plan_from(args))
    pairs = sorted({
        (node.attrs["kernel"], _expanded_width(node))
        for node in graph.nodes.values()
        if node.kind == "rephms"
    })
    reports = [
        verify_equivalence(
            RepHConvSpec(channels, kernel),
            trials=args.trials, tolerance=args.tol, seed=args.seed,
        )
        for kernel, channels in pairs
    ]
    passed = all(r.passed for r in reports)
    if args.format == "records":
        _emit(args, format_records(
            {"type": "equivalence", **r.to_record()} for r in reports
        ))
    else:
        lines = [r.summary() for r in reports]
        if passed:
            lines.append(f"all {len(reports)} mixer configurations equivalent")
        else:
            bad = sum(1 for r in reports if not r.passed)
            lines.append(f"{bad} of {len(reports)} mixer configurations diverged")
        _emit(args, "\n".join(lines) + "\n")
    return 0 if passed else 1


def _expanded_width(node) -> int:
    from .blocks import RepHMSSpec

    return RepHMSSpec(
        in_ch=node.attrs["in_ch"], out_ch=node.attrs["out_ch"],
        streams=node.attrs["streams"], blocks_per_stream=node.attrs["blocks"],
        kernel=node.attrs["kernel"], expansion=node.attrs["expansion"],
    ).expanded_width


def _cmd_bench(args) -> int:
    spec = _resolve_spec(args)
    graph = assemble(spec)
    if args.weights:
        store = load_weights(args.weights)
    else:
        store = init_weights(graph, seed=args.seed)
    validate_store(graph, store)
    x = next(_seeded_inputs(args.seed, 1, args.input))
    training = benchmark_forward(graph, store, x, "training", iterations=args.trials)
    outcome = fuse_model(graph, store)
    deployed = benchmark_forward(
        outcome.graph, outcome.store, x, "deployed", iterations=args.trials
    )
    ratio = training.median_seconds / deployed.median_seconds
    if args.format == "records":
        recs = [
            {"type": "bench", **training.to_record()},
            {"type": "bench", **deployed.to_record()},
            {"type": "speedup", "ratio": ratio},
        ]
        _emit(args, format_records(recs))
    else:
        lines = [
            _bench_line(training),
            _bench_line(deployed),
            f"speedup: {ratio:.2f}x",
        ]
        _emit(args, "\n".join(lines) + "\n")
    return 0


def _bench_line(res) -> str:
    shape = "x".join(str(d) for d in res.input_shape)
    return (
        f"{res.label:<9} median {res.median_seconds * 1e3:8.2f} ms  "
        f"min {res.min_seconds * 1e3:8.2f}  max {res.max_seconds * 1e3:8.2f}  "
        f"({shape}, {res.iterations} iterations)"
    )


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mhaf",
        description="Inspect, initialize, fuse, and time multi-branch "
        "heterogeneous-kernel detection models.",
    )
    subs = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name, handler, help_text):
        sub = subs.add_parser(name, help=help_text, description=help_text)
        _add_config_args(sub)
        sub.set_defaults(handler=handler, parser=sub)
        return sub

    sub = command("validate", _cmd_validate, "run structural checks on a model config")
    _add_uniform_arg(sub)
    _add_format_arg(sub)
    _add_out_arg(sub)

    sub = command("shapes", _cmd_shapes, "print per-node output shapes and totals")
    sub.add_argument("--input", type=int, metavar="N", help="input resolution override")
    _add_format_arg(sub)
    _add_out_arg(sub)

    sub = command("plan", _cmd_plan, "print the kernel-size schedule")
    _add_uniform_arg(sub)
    _add_format_arg(sub)
    _add_out_arg(sub)

    sub = command("rf", _cmd_rf, "report receptive fields at the model heads")
    _add_uniform_arg(sub)
    _add_format_arg(sub)
    _add_out_arg(sub)

    sub = command("export", _cmd_export, "export the model graph")
    _add_uniform_arg(sub)
    _add_format_arg(sub, choices=("dot", "records"))
    _add_out_arg(sub, what="graph")

    sub = command("init", _cmd_init, "write deterministically initialized weights")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    _add_out_arg(sub, required=True, what="weight file")
    _add_format_arg(sub)

    sub = command("fuse", _cmd_fuse, "fold normalization into conv weights and verify")
    sub.add_argument("--weights", metavar="FILE", help="training-form weight file (default: fresh init)")
    sub.add_argument("--seed", type=int, default=0, help="seed for init and test inputs (default 0)")
    sub.add_argument("--trials", type=int, default=10, help="verification inputs (default 10)")
    sub.add_argument("--input", type=int, default=320, metavar="N", help="verification resolution (default 320)")
    sub.add_argument("--tol", type=float, default=1e-2, help="max allowed deviation (default 1e-2)")
    _add_out_arg(sub, required=True, what="fused weight file")
    _add_format_arg(sub)

    sub = command("verify", _cmd_verify, "check multi-branch/single-kernel equivalence for every mixer")
    _add_uniform_arg(sub)
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    sub.add_argument("--trials", type=int, default=100, help="random draws per mixer (default 100)")
    sub.add_argument("--tol", type=float, default=1e-4, help="max allowed |error| (default 1e-4)")
    _add_format_arg(sub)
    _add_out_arg(sub)

    sub = command("bench", _cmd_bench, "time training-form vs deployed-form forward passes")
    sub.add_argument("--weights", metavar="FILE", help="training-form weight file (default: fresh init)")
    sub.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    sub.add_argument("--trials", type=int, default=31, help="timed iterations per form (default 31)")
    sub.add_argument("--input", type=int, default=320, metavar="N", help="input resolution (default 320)")
    _add_format_arg(sub)
    _add_out_arg(sub)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.handler(args)
    except WeightFileError as exc:
        print(f"mhaf: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"mhaf: {exc}", file=sys.stderr)
        return 3
    except MhafError as exc:
        print(f"mhaf: {exc}", file=sys.stderr)
        return 1
