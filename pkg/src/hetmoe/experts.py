"""Frozen expert pool, structure-aware routing and load balancing.

At every layer each expert of the pool encodes the target view; experts are
scored by how much more similar their representations are on linked node
pairs than on unlinked ones, scores are damped by each expert's accumulated
load, and a softmax over the damped scores mixes the expert outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from . import diffcore as dc
from .checkpoint import load_checkpoint, params_digest, save_checkpoint
from .diffcore import Value
from .encoders import GatLayerParams, gat_forward
from .errors import ConfigError, ContractError, DimensionError
from .hetgraph import MetaPathView, sample_pairs

log = logging.getLogger(__name__)


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of nonnegative integers."""
    words = np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint32)
    return int.from_bytes(words.tobytes(), "little") & ((1 << 63) - 1)


class ExpertPool:
    """``params[l][i]`` is the frozen layer-``l`` expert learned on source meta-path ``i``."""

    def __init__(self, params: Sequence[Sequence[GatLayerParams]], provenance: Sequence[str]):
        self.params = [[_freeze(p) for p in layer] for layer in params]
        self.provenance = list(provenance)
        if not self.params or not self.params[0]:
            raise ConfigError("expert pool is empty")
        if any(len(layer) != len(self.provenance) for layer in self.params):
            raise ConfigError("every layer needs one expert per source meta-path")
        for l in range(1, self.num_layers):
            for i in range(self.num_experts):
                if self.params[l][i].in_dim != self.params[l - 1][i].out_dim:
                    raise DimensionError(f"expert {i}: layer {l} input does not match layer {l - 1} output")

    @property
    def num_layers(self) -> int:
        return len(self.params)

    @property
    def num_experts(self) -> int:
        return len(self.provenance)

    @property
    def in_dim(self) -> int:
        return self.params[0][0].in_dim

    @property
    def out_dim(self) -> int:
        return self.params[-1][0].out_dim

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for l, layer in enumerate(self.params):
            for i, p in enumerate(layer):
                out[f"layer/{l}/expert/{i}/weight"] = p.weight.payload
                out[f"layer/{l}/expert/{i}/attn_src"] = p.attn_src.payload
                out[f"layer/{l}/expert/{i}/attn_dst"] = p.attn_dst.payload
        return out

    def digest(self) -> str:
        return params_digest(self.named_arrays())

    def manifest(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "num_experts": self.num_experts,
            "provenance": self.provenance,
            "leaky_slope": [[p.leaky_slope for p in layer] for layer in self.params],
            "activation": [[p.activation for p in layer] for layer in self.params],
            "digest": self.digest(),
        }

    def save(self, path: str | Path, config: dict | None = None) -> Path:
        return save_checkpoint(path, "expert_pool", self.named_arrays(), config=config, manifest=self.manifest())

    @classmethod
    def load(cls, path: str | Path) -> "ExpertPool":
        arrays, _, manifest = load_checkpoint(path, kind="expert_pool")
        layers = []
        for l in range(manifest["num_layers"]):
            row = []
            for i in range(manifest["num_experts"]):
                key = f"layer/{l}/expert/{i}/"
                row.append(
                    GatLayerParams(
                        weight=Value(arrays[key + "weight"]),
                        attn_src=Value(arrays[key + "attn_src"]),
                        attn_dst=Value(arrays[key + "attn_dst"]),
                        leaky_slope=manifest["leaky_slope"][l][i],
                        activation=manifest["activation"][l][i],
                    )
                )
            layers.append(row)
        return cls(layers, manifest["provenance"])


def _freeze(p: GatLayerParams) -> GatLayerParams:
    q = p.frozen_copy()
    for v in q.parameters():
        v.payload.flags.writeable = False
    return q


@dataclass
class RouterConfig:
    tau: float = 0.5
    lambda_balance: float = 0.1
    epsilon: float = 1e-8
    K: int = 256
    normalize_similarity: bool = True
    routing: bool = True  # False forces uniform expert weights

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.lambda_balance < 0:
            raise ConfigError("lambda_balance must be nonnegative")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.K < 1:
            raise ConfigError("K must be at least 1")


@dataclass
class RoutingDecision:
    layer: int
    scores: np.ndarray
    gamma: np.ndarray
    balanced: np.ndarray
    weights: np.ndarray
    loads: np.ndarray  # cumulative loads after this decision
    seed: int | None = None
    epoch: int | None = None
    view: int | None = None


@dataclass
class RouterState:
    """Load counters for one target view."""

    load: np.ndarray
    epoch_log: list[RoutingDecision] = field(default_factory=list)

    @classmethod
    def zeros(cls, num_experts: int) -> "RouterState":
        return cls(np.zeros(num_experts))

    def snapshot(self) -> "RouterState":
        return RouterState(self.load.copy(), list(self.epoch_log))


def expert_forward(pool: ExpertPool, l: int, i: int, adjacency: np.ndarray, h) -> Value:
    if not (0 <= l < pool.num_layers and 0 <= i < pool.num_experts):
        raise ContractError(f"expert ({l}, {i}) outside pool of {pool.num_layers} x {pool.num_experts}")
    return gat_forward(pool.params[l][i], adjacency, h)


def pair_similarities(h: np.ndarray, pairs: np.ndarray, normalize: bool) -> np.ndarray:
    if normalize:
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        zero = norms[:, 0] == 0
        if zero.any():
            log.info("%d zero-norm rows treated as zero vectors", int(zero.sum()))
        h = np.where(norms > 0, h / np.where(norms > 0, norms, 1.0), 0.0)
    return np.einsum("ij,ij->i", h[pairs[:, 0]], h[pairs[:, 1]])


def structural_score(h, positives: np.ndarray, negatives: np.ndarray, tau: float, normalize: bool = True) -> float:
    """``exp(s+/tau) / (exp(s+/tau) + exp(s-/tau))`` from mean pair similarities."""
    h = h.payload if isinstance(h, Value) else np.asarray(h, dtype=np.float64)
    if len(positives) == 0 or len(negatives) == 0:
        raise ContractError("structural_score needs nonempty positive and negative pair sets")
    s_pos = pair_similarities(h, np.asarray(positives), normalize).mean()
    s_neg = pair_similarities(h, np.asarray(negatives), normalize).mean()
    return float(expit((s_pos - s_neg) / tau))


def balance_and_route(scores, state: RouterState, cfg: RouterConfig, layer: int = 0) -> RoutingDecision:
    """Damp scores by relative load, softmax them, and add the weights to the load counters."""
    r = np.asarray(scores, dtype=np.float64)
    if r.shape != state.load.shape:
        raise DimensionError(f"{r.size} scores for {state.load.size} experts")
    rel = state.load / (state.load.mean() + cfg.epsilon)
    gamma = np.exp(-cfg.lambda_balance * rel)
    balanced = r * gamma
    if cfg.routing:
        z = np.exp(balanced - balanced.max())
        alpha = z / z.sum()
    else:
        alpha = np.full(r.size, 1.0 / r.size)
    state.load = state.load + alpha
    decision = RoutingDecision(layer, r, gamma, balanced, alpha, state.load.copy())
    state.epoch_log.append(decision)
    return decision


def run_expert_layer(pool: ExpertPool, l: int, view: MetaPathView, h_prev, state: RouterState, cfg: RouterConfig, seed: int) -> tuple[Value, RoutingDecision]:
    outputs = [expert_forward(pool, l, i, view.adjacency, h_prev) for i in range(pool.num_experts)]
    if pool.num_experts == 1:
        scores = np.array([0.5])
    else:
        pos, neg = sample_pairs(view, cfg.K, seed)
        scores = np.array([structural_score(o, pos, neg, cfg.tau, cfg.normalize_similarity) for o in outputs])
    decision = balance_and_route(scores, state, cfg, layer=l)
    decision.seed = seed
    return dc.weighted_sum(outputs, Value(decision.weights[None, :])), decision


def run_expert_pipeline(pool: ExpertPool, view: MetaPathView, x, state: RouterState, cfg: RouterConfig, seed: int) -> tuple[Value, list[RoutingDecision]]:
    """Route layer by layer starting from ``x``; the load counter advances once per layer."""
    h = x if x is not None else view.features
    if h is None:
        raise ContractError("view has no features and none were given")
    decisions = []
    for l in range(pool.num_layers):
        h, d = run_expert_layer(pool, l, view, h, state, cfg, derive_seed(seed, l))
        decisions.append(d)
    return h, decisions


TRACE_HEADER = "epoch\tview\tlayer\tscores\tgamma\talpha\tloads"


def format_trace_line(d: RoutingDecision) -> str:
    def fmt(a):
        return ",".join(repr(float(v)) for v in a)

    return "\t".join([str(d.epoch), str(d.view), str(d.layer), fmt(d.scores), fmt(d.gamma), fmt(d.weights), fmt(d.loads)])


def write_routing_trace(decisions: Sequence[RoutingDecision], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for d in decisions:
            fh.write(format_trace_line(d) + "\n")
    return path


def read_routing_trace(path: str | Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            vals = line.rstrip("\n").split("\t")
            row = dict(zip(header, vals))
            for k in ("epoch", "view", "layer"):
                row[k] = None if row[k] == "None" else int(row[k])
            for k in ("scores", "gamma", "alpha", "loads"):
                row[k] = np.array([float(v) for v in row[k].split(",")])
            rows.append(row)
    return rows
