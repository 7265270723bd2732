"""Command-line front end.

    edgexai infer     --model net.json --weights w.bin --image img.f32
    edgexai attribute --model net.json --weights w.bin --image img.f32 \
                      --method guided --out-prefix out
    edgexai report    --model net.json --method guided

Exit codes: 0 success, 1 usage, 2 file I/O, 3 validation (malformed
config, weights, image, or out-of-range class).
"""

from __future__ import annotations

import argparse
import sys

from .attribution import AttributionTrace, attribute, to_heatmap
from .costmodel import build_report
from .forward import TileConfig, forward_pass
from .fxp import FormatError, FxpFormat, QuantStats
from .ioutils import load_image_bytes, write_pgm, write_relevance
from .methods import AttributionMethod
from .model import NetworkSpec, ValidationError, load_weights, parse_config


class UsageError(Exception):
    """Bad command line; distinct from file and validation failures."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would call sys.exit(2)
        raise UsageError(message)


def _parse_tiles(text: str, workers: int) -> TileConfig:
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise UsageError(f"--tiles must look like 4x4x16, got {text!r}")
    try:
        n_oh, n_ow, vmm = (int(p) for p in parts)
        # execution tiles track the MAC array footprint so extra workers
        # have independent output tiles to run on
        return TileConfig(t_oh=n_oh, t_ow=n_ow, n_oh=n_oh, n_ow=n_ow,
                          vmm_unroll=vmm, workers=workers)
    except ValueError as exc:
        raise UsageError(f"bad --tiles value {text!r}: {exc}") from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="edgexai", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: _Parser, image: bool) -> None:
        p.add_argument("--model", required=True, help="network config JSON")
        p.add_argument("--tiles", default="4x4x16",
                       help="MAC array geometry OHxOWxVMM (default 4x4x16)")
        p.add_argument("--format", default=None,
                       help="fixed-point format like q8.8 (default: from config)")
        if image:
            p.add_argument("--weights", required=True, help="binary weight file")
            p.add_argument("--image", required=True,
                           help="raw float32 (c,h,w) or binary PPM image")
            p.add_argument("--workers", type=int, default=1,
                           help="threads for convolution tiles (default 1)")

    p_infer = sub.add_parser("infer", help="classify one image")
    common(p_infer, image=True)

    p_attr = sub.add_parser("attribute", help="compute input relevance for one image")
    common(p_attr, image=True)
    p_attr.add_argument("--method", required=True,
                        choices=[m.value for m in AttributionMethod])
    p_attr.add_argument("--out-prefix", required=True,
                        help="writes <prefix>.heatmap.pgm, <prefix>.relevance.f32, "
                             "<prefix>.cost.json")
    p_attr.add_argument("--class", dest="class_idx", type=int, default=None,
                        help="explain this class instead of the prediction")

    p_rep = sub.add_parser("report", help="print the cost report JSON")
    common(p_rep, image=False)
    p_rep.add_argument("--method", required=True,
                       choices=[m.value for m in AttributionMethod])
    return parser


def _load_common(args: argparse.Namespace) -> tuple[NetworkSpec, FxpFormat, TileConfig]:
    with open(args.model, "r", encoding="utf-8") as f:
        net, fmt = parse_config(f.read())
    if args.format is not None:
        fmt = FxpFormat.parse(args.format)
    workers = getattr(args, "workers", 1)
    return net, fmt, _parse_tiles(args.tiles, workers)


def _load_run(args: argparse.Namespace):
    net, fmt, tiles = _load_common(args)
    with open(args.weights, "rb") as f:
        weights = load_weights(f.read(), net, fmt)
    with open(args.image, "rb") as f:
        image = load_image_bytes(f.read(), net.input_dims, fmt)
    return net, fmt, tiles, weights, image


def _print_logits(vals, class_idx: int) -> None:
    for k, v in enumerate(vals):
        print(f"logit[{k}] = {v:.6f}")
    print(f"class: {class_idx}")


def cmd_infer(args: argparse.Namespace) -> int:
    net, fmt, tiles, weights, image = _load_run(args)
    stats = QuantStats()
    logits, _ = forward_pass(net, weights, image, tiles, stats=stats)
    vals = logits.to_floats(fmt)
    _print_logits(vals, int(vals.argmax()))
    print(f"quantized: saturated={stats.saturated} overflowed={stats.overflowed}")
    return 0


def _print_trace(trace: AttributionTrace) -> None:
    for step in trace.steps:
        print(f"bp[{step.layer_idx:2d} {step.kind}] sparsity={step.sparsity:.4f} "
              f"saturated={step.stats.saturated} overflowed={step.stats.overflowed}")
    print(f"mean gradient sparsity: {trace.mean_sparsity:.4f}")


def cmd_attribute(args: argparse.Namespace) -> int:
    net, fmt, tiles, weights, image = _load_run(args)
    method = AttributionMethod(args.method)
    rmap, trace = attribute(net, weights, image, method, tiles, args.class_idx)
    _print_logits(trace.logits, trace.class_idx)
    _print_trace(trace)
    report = build_report(net, method, tiles)
    heat_path = f"{args.out_prefix}.heatmap.pgm"
    rel_path = f"{args.out_prefix}.relevance.f32"
    cost_path = f"{args.out_prefix}.cost.json"
    write_pgm(heat_path, to_heatmap(rmap, fmt))
    write_relevance(rel_path, rmap.values.to_floats(fmt))
    with open(cost_path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    for path in (heat_path, rel_path, cost_path):
        print(f"wrote {path}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    net, fmt, tiles = _load_common(args)
    report = build_report(net, AttributionMethod(args.method), tiles)
    sys.stdout.write(report.to_json())
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"infer": cmd_infer, "attribute": cmd_attribute,
                   "report": cmd_report}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FormatError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
