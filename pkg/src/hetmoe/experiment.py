"""Cross-domain experiment orchestration: pre-train, export pool, tune per seed, aggregate."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .errors import ConfigError, HetMoEError
from .experts import ExpertPool, RouterConfig, derive_seed, write_routing_trace
from .hetgraph import HeteroGraph, MetaPathView, build_views, svd_align
from .metrics import f1_scores, sample_split
from .pretrain import PretrainConfig, export_expert_pool, run_pretraining
from .prompttune import TuneConfig, finetune

log = logging.getLogger(__name__)

SWEEPABLE = ("tau", "lambda_balance", "L")


@dataclass
class ExperimentConfig:
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    router: RouterConfig = field(default_factory=RouterConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    k: int = 5
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    runs_per_seed: int = 1

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        for name, typ in (("pretrain", PretrainConfig), ("router", RouterConfig), ("tune", TuneConfig)):
            section = d.get(name, {})
            allowed = {f.name for f in fields(typ)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
            kw[name] = typ(**section)
        for name in ("k", "seeds", "runs_per_seed"):
            if name in d:
                kw[name] = d[name]
        return cls(**kw)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def ablation(self, **flags: bool) -> "ExperimentConfig":
        return replace(self, tune=replace(self.tune, **flags))


def aligned_views(g: HeteroGraph, F: int) -> list[MetaPathView]:
    x, report = svd_align(g.raw_features, F)
    log.info("aligned %d -> %d dims, retained energy %.4f", report.original_dim, F, report.retained_energy)
    return build_views(g, x)


def pretrain_pool(source: HeteroGraph, cfg: PretrainConfig) -> tuple[ExpertPool, list]:
    state, history = run_pretraining(aligned_views(source, cfg.F), cfg)
    return export_expert_pool(state), history


@dataclass
class RunRecord:
    seed: int
    run: int
    macro_f1: float | None
    micro_f1: float | None
    best_epoch: int | None = None
    stopped_epoch: int | None = None
    final_loads: list[list[float]] | None = None
    error: str | None = None


@dataclass
class RunReport:
    config: dict[str, Any]
    runs: list[RunRecord]
    pool_digest: str
    wall_clock: float = 0.0
    traces: dict[int, list] = field(default_factory=dict, repr=False)

    def _ok(self) -> list[RunRecord]:
        return [r for r in self.runs if r.error is None]

    @property
    def macro(self) -> np.ndarray:
        return np.array([r.macro_f1 for r in self._ok()])

    @property
    def micro(self) -> np.ndarray:
        return np.array([r.micro_f1 for r in self._ok()])

    def aggregate(self) -> dict[str, float]:
        """Mean and population standard deviation over successful runs."""
        ma, mi = self.macro, self.micro
        if ma.size == 0:
            return {"macro_mean": float("nan"), "macro_std": float("nan"), "micro_mean": float("nan"), "micro_std": float("nan")}
        return {
            "macro_mean": float(ma.mean()),
            "macro_std": float(ma.std()),
            "micro_mean": float(mi.mean()),
            "micro_std": float(mi.std()),
        }

    def balance_diagnostics(self) -> dict[str, float]:
        """Normalized entropy of final expert loads, averaged over runs and views (1 = perfectly even)."""
        ents = []
        for r in self._ok():
            for load in r.final_loads or []:
                p = np.asarray(load) / np.sum(load)
                if p.size > 1:
                    ents.append(float(-(p * np.log(np.clip(p, 1e-300, None))).sum() / np.log(p.size)))
        return {"load_entropy": float(np.mean(ents)) if ents else float("nan")}

    def deterministic_dict(self) -> dict[str, Any]:
        return {
            "config": self.config,
            "pool_digest": self.pool_digest,
            "runs": [asdict(r) for r in self.runs],
            "aggregate": self.aggregate(),
            "balance": self.balance_diagnostics(),
        }

    def to_json(self) -> str:
        body = {"deterministic": self.deterministic_dict(), "timing": {"wall_clock_seconds": self.wall_clock}}
        return json.dumps(body, indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"{'seed':>6} {'run':>4} {'macro_f1':>10} {'micro_f1':>10} {'best_ep':>8}"]
        for r in self.runs:
            if r.error is None:
                lines.append(f"{r.seed:>6} {r.run:>4} {r.macro_f1:>10.4f} {r.micro_f1:>10.4f} {r.best_epoch:>8}")
            else:
                lines.append(f"{r.seed:>6} {r.run:>4} {'failed':>10} {r.error}")
        agg = self.aggregate()
        lines.append(f"Macro-F1 {agg['macro_mean']:.4f} +- {agg['macro_std']:.4f}   Micro-F1 {agg['micro_mean']:.4f} +- {agg['micro_std']:.4f}")
        lines.append(f"load entropy {self.balance_diagnostics()['load_entropy']:.4f}   pool {self.pool_digest[:16]}")
        return "\n".join(lines)


def run_cross_domain(
    source: HeteroGraph | None,
    target: HeteroGraph,
    cfg: ExperimentConfig,
    pool: ExpertPool | None = None,
    trace_dir: str | Path | None = None,
) -> RunReport:
    """Pre-train on ``source`` (unless ``pool`` is given), then few-shot tune on ``target`` for every seed."""
    start = time.perf_counter()
    if pool is None:
        if source is None:
            raise ConfigError("need a source graph or a pre-trained pool")
        pool, _ = pretrain_pool(source, cfg.pretrain)
    if target.labels is None:
        raise ConfigError("target graph has no labels")
    views = aligned_views(target, pool.in_dim)
    C = target.num_classes
    runs, traces = [], {}
    for seed in cfg.seeds:
        for r in range(cfg.runs_per_seed):
            run_seed = derive_seed(seed, r)
            try:
                split = sample_split(target.labels, cfg.k, run_seed, C)
                tcfg = replace(cfg.tune, seed=run_seed)
                _, hist = finetune(pool, views, target.labels, split, tcfg, cfg.router, C)
                pred = hist.best_predictions[split.test_ids]
                macro, micro = f1_scores(pred, target.labels[split.test_ids], C)
                runs.append(RunRecord(seed, r, macro, micro, hist.best_epoch, hist.stopped_epoch, [s.load.tolist() for s in hist.router_states]))
                traces[len(runs) - 1] = hist.decisions
                if trace_dir is not None:
                    write_routing_trace(hist.decisions, Path(trace_dir) / f"routing_seed{seed}_run{r}.tsv")
            except HetMoEError as exc:
                log.warning("seed %s run %s failed: %s", seed, r, exc)
                runs.append(RunRecord(seed, r, None, None, error=f"{type(exc).__name__}: {exc}"))
    return RunReport(cfg.to_dict(), runs, pool.digest(), time.perf_counter() - start, traces)


ABLATIONS = {
    "full": {},
    "no_routing": {"no_routing": True, "no_balance": True},
    "no_balance": {"no_balance": True},
    "no_prompt": {"no_prompt": True},
}


def run_ablations(source: HeteroGraph | None, target: HeteroGraph, cfg: ExperimentConfig, pool: ExpertPool | None = None) -> dict[str, RunReport]:
    """The full model and each ablation on the same pool and seeds."""
    if pool is None:
        pool, _ = pretrain_pool(source, cfg.pretrain)
    return {name: run_cross_domain(None, target, cfg.ablation(**flags), pool=pool) for name, flags in ABLATIONS.items()}


@dataclass
class SweepRow:
    param: str
    value: float
    macro_mean: float
    macro_std: float
    micro_mean: float
    micro_std: float


def sweep(param: str, grid: Sequence[float], source: HeteroGraph, target: HeteroGraph, base: ExperimentConfig) -> list[SweepRow]:
    """One cross-domain run per grid value; routing parameters reuse a single pre-trained pool."""
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep parameter must be one of {SWEEPABLE}")
    if not grid:
        raise ConfigError("empty sweep grid")
    pool = None
    if param != "L":
        pool, _ = pretrain_pool(source, base.pretrain)
    rows = []
    for value in grid:
        if param == "L":
            cfg = replace(base, pretrain=replace(base.pretrain, L=int(value)))
            report = run_cross_domain(source, target, cfg)
        else:
            cfg = replace(base, router=replace(base.router, **{param: float(value)}))
            report = run_cross_domain(None, target, cfg, pool=pool)
        agg = report.aggregate()
        rows.append(SweepRow(param, value, agg["macro_mean"], agg["macro_std"], agg["micro_mean"], agg["micro_std"]))
    return rows


def format_sweep(rows: Sequence[SweepRow]) -> str:
    if not rows:
        return ""
    lines = [f"{rows[0].param:>14} {'Macro-F1':>10} {'+-':>8} {'Micro-F1':>10} {'+-':>8}"]
    for r in rows:
        lines.append(f"{r.value:>14g} {r.macro_mean:>10.4f} {r.macro_std:>8.4f} {r.micro_mean:>10.4f} {r.micro_std:>8.4f}")
    return "\n".join(lines)
