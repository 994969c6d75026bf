"""Command-line entry point: ``hetmoe {gen,pretrain,tune,xdomain,sweep,gradcheck}``.

Exit codes: 0 success, 1 configuration or validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .errors import ContractError, HetMoEError, NumericalError, ValidationError
from .experiment import ExperimentConfig, aligned_views, format_sweep, pretrain_pool, run_cross_domain, sweep
from .experts import ExpertPool, write_routing_trace
from .hetgraph import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .metrics import f1_scores, sample_split
from .prompttune import finetune, tune_manifest

log = logging.getLogger("hetmoe")


def _load_config(args) -> ExperimentConfig:
    raw = {}
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg = replace(cfg, pretrain=replace(cfg.pretrain, seed=args.seed), seeds=[args.seed])
    if getattr(args, "seeds", None):
        cfg = replace(cfg, seeds=[int(s) for s in args.seeds.split(",")])
    if getattr(args, "runs_per_seed", None):
        cfg = replace(cfg, runs_per_seed=args.runs_per_seed)
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, pretrain=replace(cfg.pretrain, epochs=args.epochs))
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    flags = {"no_routing": args.no_routing, "no_balance": args.no_balance, "no_prompt": args.no_prompt}
    return cfg.ablation(**{k: v for k, v in flags.items() if v})


def cmd_gen(args) -> int:
    spec = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    g = generate_synthetic(SyntheticSpec.from_dict(spec), args.seed if args.seed is not None else 0)
    save_dataset(g, args.out)
    print(f"wrote {args.out}: {g.node_types} meta-paths {[p.name for p in g.meta_paths]}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    g = load_dataset(args.data)
    pool, history = pretrain_pool(g, cfg.pretrain)
    pool.save(args.out, config=asdict(cfg.pretrain))
    print(json.dumps({"initial_loss": history[0].loss if history else None, "final_loss": history[-1].loss if history else None, "digest": pool.digest()}))
    return 0


def cmd_tune(args) -> int:
    cfg = _load_config(args)
    pool = ExpertPool.load(args.pool)
    g = load_dataset(args.data)
    if g.labels is None:
        raise ValidationError("target dataset has no labels.tsv")
    views = aligned_views(g, pool.in_dim)
    seed = cfg.seeds[0]
    split = sample_split(g.labels, cfg.k, seed, g.num_classes)
    tcfg = replace(cfg.tune, seed=seed)
    prompts, hist = finetune(pool, views, g.labels, split, tcfg, cfg.router, g.num_classes)
    macro, micro = f1_scores(hist.best_predictions[split.test_ids], g.labels[split.test_ids], g.num_classes)
    manifest = tune_manifest(hist, tcfg) | {"pool_digest": pool.digest(), "test_macro_f1": macro, "test_micro_f1": micro}
    prompts.save(args.out, config=cfg.to_dict(), manifest=manifest)
    if args.trace:
        write_routing_trace(hist.decisions, args.trace)
    print(json.dumps({"macro_f1": macro, "micro_f1": micro, "best_epoch": hist.best_epoch}))
    return 0


def cmd_xdomain(args) -> int:
    cfg = _load_config(args)
    report = run_cross_domain(load_dataset(args.source), load_dataset(args.target), cfg, trace_dir=args.trace_dir)
    print(report.to_text())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    grid = [float(v) for v in args.grid.split(",")]
    rows = sweep(args.param, grid, load_dataset(args.source), load_dataset(args.target), cfg)
    print(format_sweep(rows))
    if args.report:
        Path(args.report).write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(args.instances)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<28} n={r.instances:<3} worst rel. error {r.worst_error:.2e} (tol {TOLERANCE:g})")
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with pretrain/router/tune sections")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--no-routing", action="store_true", help="uniform expert weights")
    common.add_argument("--no-balance", action="store_true", help="disable load balancing")
    common.add_argument("--no-prompt", action="store_true", help="uniform view fusion")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hetmoe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", parents=[common], help="write a synthetic dataset directory")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("pretrain", parents=[common], help="pre-train on a dataset and save the expert pool")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("tune", parents=[common], help="few-shot prompt tuning with a saved pool")
    s.add_argument("--pool", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--k", type=int)
    s.add_argument("--trace", help="routing trace TSV output")
    s.set_defaults(func=cmd_tune)

    s = sub.add_parser("xdomain", parents=[common], help="pre-train on source, tune and evaluate on target")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--report", help="JSON report output")
    s.add_argument("--trace-dir")
    s.add_argument("--seeds", help="comma-separated seed list")
    s.add_argument("--runs-per-seed", type=int, help="fine-tuning repeats per seed")
    s.add_argument("--epochs", type=int)
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_xdomain)

    s = sub.add_parser("sweep", parents=[common], help="sweep tau, lambda_balance or L")
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--param", required=True, choices=["tau", "lambda_balance", "L"])
    s.add_argument("--grid", required=True, help="comma-separated values")
    s.add_argument("--report")
    s.add_argument("--seeds")
    s.add_argument("--epochs", type=int)
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    s.add_argument("--instances", type=int, default=20)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (HetMoEError, ContractError, FileNotFoundError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
