"""Command-line entry point: ``acr {run,sweep,corrupt,make-stream,report,gradcheck}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import load_stream, parse_corruption, save_stream, write_split
from .evaluate import corrupted_test_sets
from .runner import (
    format_report,
    load_config,
    parse_values,
    report,
    run_experiment,
    sweep,
)

GRADCHECK_TOLERANCE = 1e-4


def _overrides(args) -> dict:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        try:
            out[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            out[key.strip()] = value
    if args.seed:
        out["seeds"] = list(args.seed)
    if args.out:
        out["out"] = args.out
    if args.policy:
        out["policy"] = args.policy
    return out


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="JSON run configuration")
    p.add_argument("--seed", type=int, action="append", help="seed to run (repeatable); replaces config seeds")
    p.add_argument("--out", help="output directory")
    p.add_argument("--policy", help="buffer policy: challenging|hard|random|reservoir")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (stream.side=12)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acr", description="Adaptive contrastive replay experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_overrides(sub.add_parser("run", help="run an experiment over the configured seeds"))

    p = sub.add_parser("sweep", help="repeat an experiment for several values of one config key")
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="'2..7' or '2,3,4'")
    _add_overrides(p)

    p = sub.add_parser("corrupt", help="write corrupted copies of a cached stream's test splits")
    p.add_argument("stream", help="stream cache directory (see make-stream)")
    p.add_argument("spec", help="<kind>:<severity>, e.g. gaussian-noise:3")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("make-stream", help="materialise a configured stream into a cache directory")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="aggregate every summary.csv under a directory")
    p.add_argument("dir")

    p = sub.add_parser("gradcheck", help="finite-difference check of model gradients")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    res = run_experiment(cfg)
    agg = res["aggregate"]
    print(f"policy={cfg.policy} seeds={cfg.seeds} out={cfg.out}")
    for m, v in agg.items():
        if v["mean"] is not None:
            print(f"  {m:<10} {v['mean']:.4f} ± {v['std']:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    results = sweep(cfg, args.param, parse_values(args.values))
    for r in results:
        a = r["aggregate"]
        print(f"{args.param}={r['value']}: ACC_iid {a['ACC_iid']['mean']:.4f}  BWT_iid {a['BWT_iid']['mean']:.4f}")
    return 0


def _cmd_corrupt(args) -> int:
    kind, sev = parse_corruption(args.spec)
    stream = load_stream(args.stream)
    tests = [(t.X_test, t.y_test) for t in stream.tasks]
    shifted = corrupted_test_sets(tests, kind, sev, stream.side, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for t, (X, y) in zip(stream.tasks, shifted):
        write_split(out / f"task{t.task_id}_test_{kind}_{sev}.bin", X, y, t.ids_test)
    print(f"wrote {len(shifted)} corrupted test splits to {out}")
    return 0


def _cmd_make_stream(args) -> int:
    from .runner import build_stream

    cfg = load_config(args.config)
    d = save_stream(build_stream(cfg.stream, args.seed), args.out)
    print(f"wrote stream cache to {d}")
    return 0


def _cmd_report(args) -> int:
    table = report(args.dir)
    print(format_report(table))
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    worst, errors = run_gradcheck(args.configs, args.seed)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"gradcheck: {len(errors)} configurations, max relative error {worst:.3e} "
          f"({'PASS' if ok else 'FAIL'} < {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "corrupt": _cmd_corrupt,
    "make-stream": _cmd_make_stream,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError) as exc:
        print(f"acr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
