"""Command-line front end.

Subcommands: ``verify`` (benchmark a dataset, emit CSV + summary JSON),
``analyze`` (single-region per-layer bound dump), ``selfcheck`` (built-in
conformance values + oracle suite), ``gen`` (seeded synthetic networks).
Exit codes: 0 on completion (whatever the verdicts), 2 on usage errors,
3 when an analysis aborts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .analyzer import AnalysisMode, AnalyzerConfig, analyze
from .domain import INPUT_LAYER, AnalysisError, BoundsVector
from .model import load_dataset, load_network, save_network
from .oracle import interval_propagate, sample_check
from .summary import summary_to_dict
from .synth import demo_network, random_dataset, random_network, write_dataset_csv
from .verifier import (
    CHECK_BOUND_COMPARE,
    CHECK_DIFFERENCE,
    DatasetRecord,
    RobustnessQuery,
    Verdict,
    run_benchmark,
    verify_robustness,
)

# Perturbation-size presets per dataset/architecture family.
EPSILON_PRESETS = {
    "mnist-fc": [0.005, 0.01, 0.015, 0.02, 0.025, 0.03],
    "mnist-conv": [0.02, 0.04, 0.06, 0.08, 0.1, 0.12],
    "cifar-fc": [0.0002, 0.0004, 0.0006, 0.0008, 0.001, 0.0012],
    "cifar-conv": [0.002, 0.004, 0.006, 0.008, 0.01, 0.012],
}


def _parse_eps(text: str) -> List[float]:
    if text in EPSILON_PRESETS:
        return list(EPSILON_PRESETS[text])
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--eps expects a comma list of radii or a preset in {sorted(EPSILON_PRESETS)}"
        )


def _parse_tau(text: str):
    if text.lower() in ("unbounded", "none", "inf"):
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("tau must be >= 1 or 'unbounded'")
    return value


def _env_slack() -> float:
    raw = os.environ.get("BBPOLY_SLACK", "")
    return float(raw) if raw else 0.0


# Sentinel distinguishing "--tau not given" from an explicit value; argparse
# only runs `type=` over string defaults, so a plain object is safe.
_TAU_UNSET = object()


def _config_from_args(args) -> AnalyzerConfig:
    mode = AnalysisMode(args.mode)
    sigma = args.sigma if args.sigma is not None else 3
    tau = None if args.tau is _TAU_UNSET else args.tau
    if mode is AnalysisMode.DEEPPOLY and (args.sigma is not None or args.tau is not _TAU_UNSET):
        print(
            "warning: --mode deeppoly ignores --sigma/--tau (layerwise, unbounded)",
            file=sys.stderr,
        )
        sigma, tau = 3, None
    if mode is AnalysisMode.INPUT_SUMMARY and args.tau is not _TAU_UNSET and args.tau is not None:
        print("warning: --mode inputsum has no step budget; --tau ignored", file=sys.stderr)
        tau = None
    return AnalyzerConfig(mode=mode, sigma=sigma, tau=tau, outward_slack=args.slack)


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--mode",
        choices=[m.value for m in AnalysisMode],
        default=AnalysisMode.BLOCK_SUMMARY.value,
        help="deeppoly: layerwise baseline; blocksum: block summaries + step budget; "
        "inputsum: summaries over the input layer",
    )
    p.add_argument("--sigma", type=int, default=None, help="affine layers per block (default 3)")
    p.add_argument(
        "--tau",
        type=_parse_tau,
        default=_TAU_UNSET,
        help="back-substitution step budget; one layer substitution or one summary "
        "jump counts as one step (default: unbounded)",
    )
    p.add_argument(
        "--slack",
        type=float,
        default=_env_slack(),
        help="relative outward widening of every evaluated bound (env BBPOLY_SLACK)",
    )


def _cmd_verify(args) -> int:
    net = load_network(args.net)
    records = load_dataset(args.data, normalize=args.normalize)
    if args.limit is not None:
        records = records[: args.limit]
    cfg = _config_from_args(args)
    jobs = args.jobs if args.jobs else (os.cpu_count() or 1)
    out_json = args.summary
    if out_json is None and args.out:
        out_json = os.path.splitext(args.out)[0] + ".json"
    report = run_benchmark(
        net,
        records,
        args.eps,
        cfg,
        timeout_per_image=args.timeout,
        check=args.check,
        jobs=jobs,
        clip=not args.no_clip,
        out_csv=args.out,
        out_json=out_json,
    )
    for e in report.per_epsilon:
        prec = "n/a" if e.precision is None else f"{e.precision:.3f}"
        print(
            f"eps={e.epsilon:g}: verified {e.verified}/{e.candidates} "
            f"(precision {prec}, mean {e.mean_time:.3f}s)"
        )
    print(
        f"candidates {report.candidates}/{report.images}; report: {args.out or '-'}"
        + (f", summary: {out_json}" if out_json else "")
    )
    return 0


def _parse_input_bounds(text: str, width: int) -> BoundsVector:
    vals = [float(t) for t in text.split(",") if t.strip()]
    if len(vals) != 2 * width:
        raise argparse.ArgumentTypeError(
            f"--input-bounds needs {2 * width} comma-separated numbers (lo,hi per input)"
        )
    arr = np.array(vals).reshape(width, 2)
    return BoundsVector(arr[:, 0], arr[:, 1])


def _cmd_analyze(args) -> int:
    net = load_network(args.net)
    if args.input_bounds:
        region = _parse_input_bounds(args.input_bounds, net.input_width)
    elif args.center:
        center = np.array([float(t) for t in args.center.split(",")])
        if center.shape[0] != net.input_width:
            raise argparse.ArgumentTypeError("--center width mismatch")
        q = RobustnessQuery(DatasetRecord(0, center), args.eps or 0.0, clip=not args.no_clip)
        from .verifier import build_region

        region = build_region(q, net)
    else:
        lo, hi = net.input_domain
        region = BoundsVector.uniform(net.input_width, lo, hi)
    cfg = _config_from_args(args)
    result = analyze(net, region, cfg)
    for k, layer in enumerate(net.layers):
        b = result.bounds[k]
        pairs = "  ".join(f"[{l:.6g}, {h:.6g}]" for l, h in zip(b.lo, b.hi))
        print(f"layer {k:2d} {layer.kind:>12s} steps={result.steps_per_layer[k]:3d}  {pairs}")
    print(
        f"total steps {result.total_steps}, peak live matrices {result.peak_live_matrices}"
    )
    if args.json:
        payload = {
            "mode": cfg.mode.value,
            "sigma": cfg.sigma,
            "tau": cfg.tau,
            "layers": [
                {"kind": net.layers[k].kind, "lo": b.lo.tolist(), "hi": b.hi.tolist()}
                for k, b in enumerate(result.bounds)
            ],
            "steps_per_layer": result.steps_per_layer,
            "peak_live_matrices": result.peak_live_matrices,
        }
        with open(args.json, "w") as fh:
            json.dump(payload, fh, indent=2)
    if args.dump_summaries:
        payload = [summary_to_dict(s) for _, s in sorted(result.summaries.items())]
        with open(args.dump_summaries, "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def _close(a, b, tol=1e-9) -> bool:
    return abs(a - b) <= tol


def _cmd_selfcheck(args) -> int:
    net = demo_network()
    region = BoundsVector.uniform(2, -1.0, 1.0)
    ok = True

    dp = analyze(net, region, AnalyzerConfig(mode=AnalysisMode.DEEPPOLY))
    bs = analyze(net, region, AnalyzerConfig(mode=AnalysisMode.BLOCK_SUMMARY, sigma=2))
    h2 = dp.bounds[2]
    print(f"hidden affine bounds (layerwise): x7 in [{h2.lo[0]:g}, {h2.hi[0]:g}], "
          f"x8 in [{h2.lo[1]:g}, {h2.hi[1]:g}]")
    ok &= _close(h2.lo[0], 0.0) and _close(h2.hi[0], 3.0)
    ok &= _close(h2.lo[1], -2.0) and _close(h2.hi[1], 2.0)

    out_bs = bs.output_bounds
    out_dp = dp.output_bounds
    print(f"x11 in [{out_bs.lo[0]:g}, {out_bs.hi[0]:g}] (blocksum, sigma=2)")
    print(f"x11 in [{out_dp.lo[0]:g}, {out_dp.hi[0]:g}] (deeppoly)")
    print(f"x12 in [{out_bs.lo[1]:g}, {out_bs.hi[1]:g}] (blocksum)")
    ok &= _close(out_bs.lo[0], 1.0) and _close(out_bs.hi[0], 6.0)
    ok &= _close(out_dp.lo[0], 1.0) and _close(out_dp.hi[0], 5.5)
    ok &= _close(out_bs.lo[1], 0.0) and _close(out_bs.hi[1], 2.0)

    iv = interval_propagate(net, region)
    ok &= all(
        np.all(r.lo >= i.lo - 1e-12) and np.all(r.hi <= i.hi + 1e-12)
        for r, i in zip(dp.bounds, iv)
    )
    for name, result in (("deeppoly", dp), ("blocksum", bs)):
        check = sample_check(net, region, result.bounds, n_samples=1000, seed=7)
        print(f"sampling oracle ({name}): {'pass' if check.passed else 'FAIL'} "
              f"(worst violation {check.worst_violation:.2e})")
        ok &= check.passed

    q = RobustnessQuery(DatasetRecord(label=0, pixels=np.zeros(2)), 1.0, clip=True)
    verdict = verify_robustness(net, q, AnalyzerConfig(mode=AnalysisMode.BLOCK_SUMMARY, sigma=2))
    print(f"difference check on demo region: {verdict.value}")
    ok &= verdict is Verdict.VERIFIED

    print("selfcheck:", "ok" if ok else "FAILED")
    return 0 if ok else 1


def _cmd_gen(args) -> int:
    net = random_network(args.seed, kind=args.kind)
    save_network(net, args.out)
    print(f"wrote {args.kind} network ({net.input_width} inputs, "
          f"{net.n_layers} layers) to {args.out}")
    if args.data:
        rng = np.random.default_rng(args.seed + 1)
        records = random_dataset(net, rng, args.rows)
        write_dataset_csv(records, args.data)
        print(f"wrote {args.rows} rows to {args.data}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bbpoly",
        description="Certify L-inf robustness of ReLU networks via linear bound "
        "propagation with block summaries and bounded back-substitution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="verify a dataset against a network")
    p.add_argument("--net", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--eps", type=_parse_eps, required=True,
                   help="comma list of radii or a preset name "
                   f"({', '.join(sorted(EPSILON_PRESETS))})")
    p.add_argument("--timeout", type=float, default=None, help="seconds per image")
    p.add_argument("--out", default=None, help="per-image CSV report path")
    p.add_argument("--summary", default=None, help="summary JSON path")
    p.add_argument("--check", choices=[CHECK_DIFFERENCE, CHECK_BOUND_COMPARE],
                   default=CHECK_DIFFERENCE)
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: cores)")
    p.add_argument("--normalize", action="store_true", help="divide pixels by 255, clamp to [0,1]")
    p.add_argument("--limit", type=int, default=None, help="use only the first N rows")
    p.add_argument("--no-clip", action="store_true", help="do not clamp regions to the input domain")
    _add_analysis_flags(p)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("analyze", help="dump per-layer bounds for one region")
    p.add_argument("--net", required=True)
    p.add_argument("--input-bounds", default=None, help="lo,hi per input, comma-flattened")
    p.add_argument("--center", default=None, help="comma list; combine with --eps")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--json", default=None, help="write the dump as JSON")
    p.add_argument("--dump-summaries", default=None, help="write stored block summaries as JSON")
    _add_analysis_flags(p)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("selfcheck", help="run built-in conformance values and oracles")
    p.set_defaults(func=_cmd_selfcheck)

    p = sub.add_parser("gen", help="generate a seeded synthetic network (and dataset)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=["dense", "conv", "residual"], default="dense")
    p.add_argument("--data", default=None, help="also write a dataset CSV")
    p.add_argument("--rows", type=int, default=20)
    p.set_defaults(func=_cmd_gen)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AnalysisError as exc:
        print(f"analysis aborted: {exc}", file=sys.stderr)
        return 3
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
