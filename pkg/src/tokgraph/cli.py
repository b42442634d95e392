"""Command-line entry point: ``tokgraph <subcommand> --config run.json --out dir``."""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as config_mod
from . import harness
from .config import ABLATION_ROWS, RunConfig
from .model import STAGES, module_of, param_report
from .synth import SPLITS, generate_dataset, save_dataset

GRADCHECK_TOLERANCE = 1e-5
DEFAULT_BENCH_SIZES = ((16, 16, 128), (16, 32, 128), (16, 64, 128), (16, 128, 128), (64, 49, 256))


def _config(args, default=None):
    if args.config:
        return config_mod.load(args.config)
    return default if default is not None else RunConfig()


def _data_split(cfg, split):
    return harness.load_data(cfg)[split]


def cmd_train(args):
    cfg = _config(args)
    res = harness.train(cfg, out_dir=args.out)
    print(f"best epoch {res.best_epoch}; checkpoint {res.checkpoint}")


def cmd_eval(args):
    ckpt = args.checkpoint or os.path.join(args.out, "checkpoint.ckpt")
    model = harness.load_model(ckpt)
    cfg = _config(args, model.cfg)
    report = harness.evaluate(model, _data_split(cfg, args.split),
                              os.path.join(args.out, f"eval_{args.split}.txt"))
    print(report.to_text(), end="")


def cmd_ablate(args):
    cfg = _config(args)
    res = harness.ablate(cfg, out_dir=args.out, seeds=args.seeds or None, rows=args.rows or None)
    for row, reps in res.items():
        print(f"{row:12s} median top1 {harness.median_top1(reps):.4f}")


def cmd_sweep_ffn(args):
    cfg = _config(args)
    res = harness.sweep_ffn(cfg, args.widths, out_dir=args.out, seeds=args.seeds or None)
    for w, reps in res.items():
        print(f"ffn {w:5d} median top1 {harness.median_top1(reps):.4f}")


def cmd_params(args):
    report = param_report(_config(args))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "params.txt"), "w") as fh:
        fh.write(report.to_text())
    print(report.to_text(), end="")


def cmd_gradcheck(args):
    cfg = _config(args, harness.tiny_config())
    worst, per = harness.gradcheck(cfg, fault=args.fault, eps=args.eps)
    groups = {}
    for name, err in per.items():
        g = module_of(name)
        groups[g] = max(groups.get(g, 0.0), err)
    lines = [f"{g:20s} {e:.3e}" for g, e in groups.items()]
    ok = worst < GRADCHECK_TOLERANCE
    lines.append(f"max relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "gradcheck.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if ok else 1


def cmd_bench(args):
    cfg = _config(args)
    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes] if args.sizes else DEFAULT_BENCH_SIZES
    rows = harness.bench(sizes, k_prop=cfg.model.k_prop, alpha=cfg.model.alpha, repeats=args.repeats,
                         seed=cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    harness.write_rows(os.path.join(args.out, "bench.csv"), rows)
    for r in rows:
        print(f"T={r['T']:3d} P={r['P']:4d} C={r['C']:4d} dense {r['dense_s']:.4f}s "
              f"structured {r['structured_s']:.4f}s speedup {r['speedup']:.1f}x")
    fit = [r for r in rows if (r["T"], r["C"]) == (rows[0]["T"], rows[0]["C"])]
    if len(fit) >= 2:
        ps = [r["P"] for r in fit]
        print(f"exponent over P: dense {harness.scaling_exponent(ps, [r['dense_s'] for r in fit]):.2f}, "
              f"structured {harness.scaling_exponent(ps, [r['structured_s'] for r in fit]):.2f}")


def cmd_dump_features(args):
    ckpt = args.checkpoint or os.path.join(args.out, "checkpoint.ckpt")
    model = harness.load_model(ckpt)
    cfg = _config(args, model.cfg)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, f"features_{args.stage}_{args.split}.csv")
    feats = harness.dump_features(model, _data_split(cfg, args.split), args.stage, path)
    print(f"wrote {len(feats)} rows to {path}")


def cmd_gen_data(args):
    cfg = _config(args)
    data = generate_dataset(cfg.data.synth)
    save_dataset(data, cfg.data.synth, args.out)
    print(" ".join(f"{s}={len(data[s])}" for s in SPLITS))


def build_parser():
    parser = argparse.ArgumentParser(prog="tokgraph")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="run config JSON (defaults apply when omitted)")
        p.add_argument("--out", required=True, help="output directory")
        p.set_defaults(fn=fn)
        return p

    add("train", cmd_train, "train one configuration")
    p = add("eval", cmd_eval, "evaluate a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=SPLITS, default="test")
    p = add("ablate", cmd_ablate, "train and test the five ablation rows")
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--rows", nargs="*", choices=list(ABLATION_ROWS))
    p = add("sweep-ffn", cmd_sweep_ffn, "train and test over encoder MLP widths")
    p.add_argument("--widths", type=int, nargs="+", default=[256, 512, 1024, 2048])
    p.add_argument("--seeds", type=int, nargs="*")
    add("params", cmd_params, "learnable parameter counts per module")
    p = add("gradcheck", cmd_gradcheck, "finite-difference check of the full pipeline")
    p.add_argument("--fault", action="store_true", help="flip the gradient sign at the pooled features")
    p.add_argument("--eps", type=float, default=1e-6)
    p = add("bench", cmd_bench, "dense vs structured propagation timing")
    p.add_argument("--sizes", nargs="*", help="TxPxC triples")
    p.add_argument("--repeats", type=int, default=3)
    p = add("dump-features", cmd_dump_features, "pooled per-clip features at one stage")
    p.add_argument("--checkpoint")
    p.add_argument("--stage", choices=STAGES, default="graph")
    p.add_argument("--split", choices=SPLITS, default="test")
    add("gen-data", cmd_gen_data, "write the synthetic dataset to disk")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args) or 0
    except (ValueError, OSError, KeyError) as exc:
        print(f"tokgraph {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
