"""Command-line entry point: train / gradcheck / flops / memsize / buckets / ablate.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 training
divergence. Every subcommand honors its seed inputs and writes only inside
its output directory; the default output root is ``$MEMORYFORMER_OUT`` (or
``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys

import numpy as np

from .accounting import (
    GIGA,
    MEGABYTE,
    crossover_ratio,
    flops_memoryformer_block,
    flops_standard_block,
    memory_block_bytes,
    synthetic_bucket_histogram,
    table_memory_bytes,
    verify_flops_cells,
    verify_memory_cells,
)
from .configio import ConfigError, load_config, load_grid, save_manifest
from .corpus import CorpusDataset, load_corpus
from .gradcheck import SCOPES, run_gradcheck
from .training import TrainingDiverged, run_ablation, run_training

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG_ERROR = 2
EXIT_DIVERGED = 3


def _out_root() -> str:
    return os.environ.get("MEMORYFORMER_OUT", "runs")


def _print_table(title: str, rows: list[tuple], headers: tuple[str, ...]) -> None:
    print(title)
    cells = [headers] + [tuple(f"{v:.4f}" if isinstance(v, float) else str(v) for v in r)
                         for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    for row in cells:
        print("  " + "  ".join(cell.rjust(w) for cell, w in zip(row, widths)))


def _write_csv(path: str, headers: list[str], rows: list) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


def _report_cells(results: list[dict], title: str) -> bool:
    print(title)
    ok = True
    for r in results:
        status = "pass" if r["passed"] else "FAIL"
        ok &= r["passed"]
        print(f"  [{status}] {r['label']:<12} {r['quantity']:<16} "
              f"expected {r['expected']:>8.1f}  computed {r['computed']:>10.4f}")
    n_pass = sum(r["passed"] for r in results)
    print(f"  {n_pass}/{len(results)} cells pass")
    return ok


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    try:
        from .checkpoint import load_checkpoint, save_checkpoint

        if args.resume:
            bundle = load_checkpoint(args.resume)
            model_cfg, train_cfg = bundle.model_cfg, bundle.train_cfg
        else:
            bundle = None
            model_cfg, train_cfg = load_config(args.config)
        overrides = {}
        if args.steps is not None:
            overrides["total_steps"] = args.steps
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.corpus is not None:
            overrides["corpus"] = args.corpus
        if overrides:
            train_cfg = dataclasses.replace(train_cfg, **overrides)
        if args.variant is not None:
            model_cfg = dataclasses.replace(model_cfg, variant=args.variant)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    name = args.name or os.path.splitext(os.path.basename(args.config or args.resume))[0]
    out_dir = args.out or os.path.join(_out_root(), name)
    os.makedirs(out_dir, exist_ok=True)
    save_manifest(os.path.join(out_dir, "manifest.cfg"), model_cfg, train_cfg,
                  seed=train_cfg.seed, status="running")
    try:
        kwargs = {}
        if bundle is not None:
            kwargs = dict(model=bundle.model, optimizer=bundle.optimizer,
                          start_step=bundle.step, data_rng=bundle.data_rng)
        result = run_training(model_cfg, train_cfg, out_dir, log=print, **kwargs)
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    ckpt = os.path.join(out_dir, "checkpoint-final")
    save_checkpoint(ckpt, result.model, train_cfg, step=result.steps,
                    optimizer=result.optimizer, data_rng=result.data_rng)
    save_manifest(os.path.join(out_dir, "manifest.cfg"), model_cfg, train_cfg,
                  seed=train_cfg.seed, status="done", step=result.steps,
                  val_loss=f"{result.val_loss:.6f}", val_ppl=f"{result.val_ppl:.4f}")
    print(f"done: val loss {result.val_loss:.4f}, ppl {result.val_ppl:.2f}; "
          f"checkpoint at {ckpt}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    result = run_gradcheck(args.scope, n_seeds=args.seeds, base_seed=args.seed,
                           inject_bug=args.inject_bug)
    status = "pass" if result.passed else "FAIL"
    print(f"[{status}] scope={result.scope} worst rel. err {result.worst_rel_err:.3e} "
          f"(tolerance {result.tolerance:g}, {result.seeds_checked} seeds)")
    return EXIT_OK if result.passed else EXIT_VERIFY_FAIL


def cmd_flops(args) -> int:
    if args.paper_tables:
        ok = _report_cells(verify_flops_cells(), "block FLOPs vs published cells (G):")
        return EXIT_OK if ok else EXIT_VERIFY_FAIL
    if args.ratio:
        r = crossover_ratio(args.s, args.d, args.tau)
        print(f"crossover ratio at s={args.s} d={args.d} tau={args.tau}: {r:.3f}")
        return EXIT_OK
    std = flops_standard_block(args.s, args.d)
    rows = [("standard." + k, v) for k, v in std.rows()]
    if args.d % args.tau == 0:
        k_chunks = args.chunks or args.d // args.tau
        mf = flops_memoryformer_block(args.s, args.d, args.tau, k_chunks,
                                      args.expand, mode=args.mode)
        rows += [(f"table[{args.mode}]." + k, v) for k, v in mf.rows()]
    _print_table(f"block FLOPs in G (s={args.s}, d={args.d}):", rows,
                 ("component", "GFLOPs"))
    if args.out:
        _write_csv(os.path.join(args.out, "flops_report.csv"),
                   ["component", "gflops"], rows)
    return EXIT_OK


def cmd_memsize(args) -> int:
    if args.paper_tables:
        ok = _report_cells(verify_memory_cells(), "table storage vs published cells (MB):")
        return EXIT_OK if ok else EXIT_VERIFY_FAIL
    h = args.h or args.d
    layer = table_memory_bytes(args.tau, args.chunks, h, args.bytes_per_element)
    rows = [("layer", layer / MEGABYTE)]
    if args.d == args.tau * args.chunks:
        rep = memory_block_bytes(args.tau, args.chunks, args.d, args.expand,
                                 args.bytes_per_element)
        rows += [("block." + k, v) for k, v in rep.rows()]
    _print_table(
        f"table storage in decimal MB (tau={args.tau}, K={args.chunks}, h={h}, "
        f"{args.bytes_per_element} B/elem):", rows, ("component", "MB"))
    if args.out:
        _write_csv(os.path.join(args.out, "memory_report.csv"), ["component", "mb"], rows)
    return EXIT_OK


def cmd_buckets(args) -> int:
    out_dir = args.out or os.path.join(_out_root(), "buckets")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    summary = []
    if args.synthetic:
        counts = synthetic_bucket_histogram(args.tau, args.samples, seed=args.seed)
        rows = [("synthetic", 0, b, int(c)) for b, c in enumerate(counts)]
        summary.append(("synthetic", 0, int(counts.min()), int(counts.max()),
                        counts.mean(), counts.max() / counts.mean()))
    else:
        if not args.checkpoint:
            print("either --synthetic or --checkpoint is required", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        from .accounting import bucket_stats
        from .checkpoint import load_checkpoint

        try:
            bundle = load_checkpoint(args.checkpoint)
            corpus_src = args.corpus or bundle.train_cfg.corpus
            dataset = CorpusDataset.from_source(corpus_src, bundle.train_cfg.eval_frac)
        except (FileNotFoundError, ConfigError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        stream = dataset.val_tokens[: args.tokens]
        for layer, hist in bucket_stats(bundle.model, stream).items():
            for k in range(hist.counts.shape[0]):
                rows.extend((layer, k, b, int(c)) for b, c in enumerate(hist.counts[k]))
                counts = hist.counts[k]
                summary.append((layer, k, int(counts.min()), int(counts.max()),
                                counts.mean(), counts.max() / max(counts.mean(), 1e-12)))
    _write_csv(os.path.join(out_dir, "bucket_hist.csv"),
               ["layer", "table", "bucket", "count"], rows)
    _write_csv(os.path.join(out_dir, "bucket_summary.csv"),
               ["layer", "table", "min", "max", "mean", "max_over_mean"], summary)
    worst = max(s[-1] for s in summary)
    print(f"wrote {len(rows)} histogram rows for {len(summary)} tables to {out_dir}")
    print(f"worst max/mean frequency ratio: {worst:.3f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    try:
        name, grid = load_grid(args.grid)
        if args.steps is not None:
            grid = [(label, m, dataclasses.replace(t, total_steps=args.steps))
                    for label, m, t in grid]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    out_dir = args.out or os.path.join(_out_root(), f"ablation-{name}")
    records = run_ablation(grid, out_dir, log=print)
    failures = [r for r in records if r["status"] != "ok"]
    print(f"{len(records) - len(failures)}/{len(records)} runs completed; "
          f"results at {os.path.join(out_dir, 'ablation_results.csv')}")
    return EXIT_OK if not failures else EXIT_VERIFY_FAIL


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memoryformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", help="run config (see configs/)")
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=("memoryformer", "baseline"))
    p.add_argument("--corpus", help="override corpus path ('builtin' for the synthetic default)")
    p.add_argument("--name", help="run name (default: config stem)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("scope", choices=SCOPES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=20, help="number of random seeds")
    p.add_argument("--inject-bug", action="store_true",
                   help="test hook: negate one gradient term; the check must fail")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("flops", help="block FLOPs accounting")
    p.add_argument("-s", type=int, default=2048)
    p.add_argument("-d", type=int, default=512)
    p.add_argument("--tau", type=int, default=8)
    p.add_argument("--chunks", type=int, help="table count K (default d/tau)")
    p.add_argument("--expand", type=int, default=2, help="expansion bits e")
    p.add_argument("--mode", choices=("paper", "exact"), default="paper")
    p.add_argument("--ratio", action="store_true", help="print the crossover ratio")
    p.add_argument("--paper-tables", action="store_true",
                   help="verify all published block-FLOPs cells")
    p.add_argument("--out", help="also write flops_report.csv here")
    p.set_defaults(fn=cmd_flops)

    p = sub.add_parser("memsize", help="table storage accounting")
    p.add_argument("--tau", type=int, default=8)
    p.add_argument("--chunks", type=int, default=64)
    p.add_argument("--h", type=int, help="layer output width (default d)")
    p.add_argument("-d", type=int, default=512)
    p.add_argument("--expand", type=int, default=2)
    p.add_argument("--bytes-per-element", type=int, default=2)
    p.add_argument("--paper-tables", action="store_true",
                   help="verify all published storage cells")
    p.add_argument("--out", help="also write memory_report.csv here")
    p.set_defaults(fn=cmd_memsize)

    p = sub.add_parser("buckets", help="bucket retrieval histograms")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--corpus", help="held-out text (default: the run's corpus)")
    p.add_argument("--tokens", type=int, default=65536)
    p.add_argument("--synthetic", action="store_true",
                   help="hash i.i.d. normal chunks instead of model activations")
    p.add_argument("--tau", type=int, default=8)
    p.add_argument("--samples", type=int, default=65536)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_buckets)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--grid", required=True, help="grid config (see configs/)")
    p.add_argument("--steps", type=int, help="override the step budget for every run")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "train" and not (args.config or args.resume):
        print("train requires --config or --resume", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
