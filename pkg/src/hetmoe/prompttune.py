"""Prompt-weighted fusion of routed view representations and few-shot fine-tuning.

Only the per-view prompt vectors and the linear classifier are trained; the
expert pool stays frozen and routing weights carry no gradient.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .checkpoint import load_checkpoint, save_checkpoint
from .diffcore import AdamState, Tape, Value
from .errors import ConfigError, ContractError, EmptySetError, NumericalError
from .experts import ExpertPool, RouterConfig, RouterState, RoutingDecision, derive_seed, run_expert_pipeline
from .hetgraph import MetaPathView
from .metrics import FewShotSplit, f1_scores

log = logging.getLogger(__name__)


@dataclass
class TuneConfig:
    epochs: int = 500
    patience: int = 20
    lr: float = 5e-3
    seed: int = 0
    no_prompt: bool = False
    no_routing: bool = False
    no_balance: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.patience < 1:
            raise ConfigError("epochs and patience must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def router(self, base: RouterConfig) -> RouterConfig:
        """``base`` with this run's ablation switches applied."""
        cfg = base
        if self.no_balance:
            cfg = replace(cfg, lambda_balance=0.0)
        if self.no_routing:
            cfg = replace(cfg, routing=False, lambda_balance=0.0)
        return cfg


@dataclass
class PromptSet:
    prompts: list[Value]  # one 1 x d row per target view
    classifier_weight: Value  # d x C
    classifier_bias: Value  # 1 x C

    @classmethod
    def init(cls, num_views: int, d: int, num_classes: int, rng: np.random.Generator) -> "PromptSet":
        bound = 1.0 / np.sqrt(d)
        return cls(
            prompts=[Value(np.zeros((1, d)), requires_grad=True, name=f"prompt/{j}") for j in range(num_views)],
            classifier_weight=Value(rng.uniform(-bound, bound, size=(d, num_classes)), requires_grad=True),
            classifier_bias=Value(np.zeros((1, num_classes)), requires_grad=True),
        )

    def parameters(self, include_prompts: bool = True) -> list[Value]:
        head = [self.classifier_weight, self.classifier_bias]
        return (list(self.prompts) + head) if include_prompts else head

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {f"prompt/{j}": p.payload for j, p in enumerate(self.prompts)}
        out["classifier/weight"] = self.classifier_weight.payload
        out["classifier/bias"] = self.classifier_bias.payload
        return out

    def copy(self) -> "PromptSet":
        return PromptSet(
            prompts=[Value(p.payload, requires_grad=p.requires_grad, name=p.name) for p in self.prompts],
            classifier_weight=Value(self.classifier_weight.payload, requires_grad=True),
            classifier_bias=Value(self.classifier_bias.payload, requires_grad=True),
        )

    def save(self, path: str | Path, config: dict | None = None, manifest: dict | None = None) -> Path:
        return save_checkpoint(path, "prompt_set", self.named_arrays(), config=config, manifest=manifest)

    @classmethod
    def load(cls, path: str | Path) -> tuple["PromptSet", dict, dict]:
        arrays, config, manifest = load_checkpoint(path, kind="prompt_set")
        n = sum(1 for k in arrays if k.startswith("prompt/"))
        ps = cls(
            prompts=[Value(arrays[f"prompt/{j}"], requires_grad=True) for j in range(n)],
            classifier_weight=Value(arrays["classifier/weight"], requires_grad=True),
            classifier_bias=Value(arrays["classifier/bias"], requires_grad=True),
        )
        return ps, config, manifest


def fuse_views(H_list: Sequence, prompts: PromptSet, uniform: bool = False) -> tuple[Value, Value]:
    """Softmax-over-views weights from ``<mean_rows(H_j), p_j>``; returns ``(H_final, beta)``."""
    if not H_list:
        raise ContractError("fuse_views needs at least one view")
    if len(H_list) != len(prompts.prompts):
        raise ContractError(f"{len(H_list)} views but {len(prompts.prompts)} prompts")
    if uniform:
        beta = Value(np.full((1, len(H_list)), 1.0 / len(H_list)))
    else:
        scores = [dc.matmul(dc.mean_rows(h), dc.transpose(p)) for h, p in zip(H_list, prompts.prompts)]
        beta = dc.rowwise_softmax(dc.hstack(scores))
    return dc.weighted_sum(H_list, beta), beta


def predict(H_final, prompts: PromptSet) -> Value:
    return dc.add(dc.matmul(H_final, prompts.classifier_weight), prompts.classifier_bias)


@dataclass
class TuneHistory:
    train_loss: list[float] = field(default_factory=list)
    val_macro: list[float] = field(default_factory=list)
    betas: list[list[float]] = field(default_factory=list)
    decisions: list[RoutingDecision] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = float("-inf")
    stopped_epoch: int = -1
    best_predictions: np.ndarray | None = None
    router_states: list[RouterState] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.train_loss[0]


def route_views(pool: ExpertPool, views: Sequence[MetaPathView], states: Sequence[RouterState], router_cfg: RouterConfig, seed: int, epoch: int) -> tuple[list[Value], list[RoutingDecision]]:
    """One routed forward pass per target view; router states advance."""
    H_list, decisions = [], []
    for j, (view, state) in enumerate(zip(views, states)):
        h, ds = run_expert_pipeline(pool, view, view.features, state, router_cfg, derive_seed(seed, epoch, j))
        for d in ds:
            d.epoch, d.view = epoch, j
        H_list.append(h)
        decisions.extend(ds)
    return H_list, decisions


def finetune(
    pool: ExpertPool,
    views: Sequence[MetaPathView],
    labels,
    split: FewShotSplit,
    cfg: TuneConfig,
    router_cfg: RouterConfig | None = None,
    num_classes: int | None = None,
) -> tuple[PromptSet, TuneHistory]:
    """Train prompts and classifier on ``split.train_ids``; keep the best-validation Macro-F1 parameters."""
    labels = np.asarray(labels, dtype=np.int64)
    if split.train_ids.size == 0:
        raise EmptySetError("empty training split")
    if not views:
        raise ContractError("fine-tuning needs at least one target view")
    for v in views:
        if v.features is None or v.features.shape[1] != pool.in_dim:
            raise ContractError(f"view {v.meta_path.name!r} needs features of width {pool.in_dim}")
    C = num_classes if num_classes is not None else int(labels.max()) + 1
    rcfg = cfg.router(router_cfg or RouterConfig())
    rng = np.random.default_rng(derive_seed(cfg.seed, 0xC1A5))
    prompts = PromptSet.init(len(views), pool.out_dim, C, rng)
    params = prompts.parameters(include_prompts=not cfg.no_prompt)
    adam = AdamState()
    states = [RouterState.zeros(pool.num_experts) for _ in views]
    hist = TuneHistory()
    best = prompts.copy()
    for epoch in range(cfg.epochs):
        H_list, decisions = route_views(pool, views, states, rcfg, cfg.seed, epoch)
        hist.decisions.extend(decisions)
        dc.zero_grad(params)
        with Tape():
            h_final, beta = fuse_views(H_list, prompts, uniform=cfg.no_prompt)
            loss = dc.cross_entropy(predict(h_final, prompts), labels, split.train_ids)
            if not np.isfinite(loss.item()):
                raise NumericalError(f"fine-tuning epoch {epoch}: non-finite loss")
            dc.backward(loss)
        hist.train_loss.append(loss.item())
        hist.betas.append(beta.payload.ravel().tolist())
        dc.adam_step(params, cfg.lr, state=adam)
        with Tape():
            h_final, _ = fuse_views(H_list, prompts, uniform=cfg.no_prompt)
            pred = predict(h_final, prompts).payload.argmax(axis=1)
        val_macro, _ = f1_scores(pred[split.val_ids], labels[split.val_ids], C)
        hist.val_macro.append(val_macro)
        if val_macro > hist.best_val:
            hist.best_val = val_macro
            hist.best_epoch = epoch
            hist.best_predictions = pred
            hist.router_states = [s.snapshot() for s in states]
            best = prompts.copy()
        hist.stopped_epoch = epoch
        if epoch - hist.best_epoch >= cfg.patience:
            break
    return best, hist


def tune_manifest(hist: TuneHistory, cfg: TuneConfig) -> dict:
    return {
        "best_epoch": hist.best_epoch,
        "best_val_macro_f1": hist.best_val,
        "stopped_epoch": hist.stopped_epoch,
        "router_loads": [s.load.tolist() for s in hist.router_states],
        "tune_config": asdict(cfg),
    }
