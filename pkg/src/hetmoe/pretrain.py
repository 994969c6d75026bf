"""Self-supervised source-domain pre-training by masked feature and edge reconstruction.

Each meta-path view owns an encoder stack and a one-layer decoder. Per
epoch and per view, the feature task encodes masked features over the full
adjacency and reconstructs the masked rows; the edge task encodes the clean
features over an edge-dropped adjacency and reconstructs adjacency rows
from ``sigmoid(Z Z^T)``. Per-view losses are combined with softmax
attention weights computed from each view's (masked) inputs.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import diffcore as dc
from .checkpoint import load_checkpoint, save_checkpoint
from .diffcore import AdamState, Tape, Value
from .encoders import SemanticAttentionParams, ViewDecoder, ViewEncoder, decode_view, encode_view, semantic_scores
from .errors import ConfigError, NumericalError
from .experts import ExpertPool, derive_seed
from .hetgraph import MetaPathView

log = logging.getLogger(__name__)

FEATURE_TASK = 0
EDGE_TASK = 1
RECON_TARGETS = ("original", "masked_input")


@dataclass
class PretrainConfig:
    r1: float = 0.5
    r2: float = 0.5
    gamma1: float = 2.0
    gamma2: float = 2.0
    lambda_edge: float = 0.5
    F: int = 64
    d: int = 64
    L: int = 2
    epochs: int = 500
    lr: float = 1e-3
    seed: int = 0
    attn_dim: int = 32
    recon_target: str = "original"

    def __post_init__(self):
        if not 0.0 <= self.r1 < 1.0 or not 0.0 <= self.r2 < 1.0:
            raise ConfigError("mask ratios must lie in [0, 1)")
        if self.gamma1 < 1 or self.gamma2 < 1:
            raise ConfigError("gamma1 and gamma2 must be >= 1")
        if self.lambda_edge < 0:
            raise ConfigError("lambda_edge must be nonnegative")
        if min(self.F, self.d, self.L, self.attn_dim) < 1 or self.epochs < 0:
            raise ConfigError("dimensions and layer count must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.recon_target not in RECON_TARGETS:
            raise ConfigError(f"recon_target must be one of {RECON_TARGETS}")


@dataclass
class PretrainState:
    encoders: list[ViewEncoder]
    decoders: list[ViewDecoder]
    mask_embedding: Value
    sa_feat: SemanticAttentionParams
    sa_edge: SemanticAttentionParams
    view_names: list[str]
    adam: AdamState = field(default_factory=AdamState)

    @classmethod
    def init(cls, config: PretrainConfig, view_names: Sequence[str]) -> "PretrainState":
        rng = np.random.default_rng(config.seed)
        encoders, decoders = [], []
        for _ in view_names:
            encoders.append(ViewEncoder.init(config.F, config.d, config.L, rng))
            decoders.append(ViewDecoder.init(config.d, config.F, rng))
        bound = 1.0 / np.sqrt(config.F)
        mask = Value(rng.uniform(-bound, bound, size=(1, config.F)), requires_grad=True, name="mask_embedding")
        return cls(
            encoders=encoders,
            decoders=decoders,
            mask_embedding=mask,
            sa_feat=SemanticAttentionParams.init(config.F, config.attn_dim, rng),
            sa_edge=SemanticAttentionParams.init(config.F, config.attn_dim, rng),
            view_names=list(view_names),
        )

    def named_parameters(self) -> dict[str, Value]:
        out: dict[str, Value] = {}
        for i, (enc, dec) in enumerate(zip(self.encoders, self.decoders)):
            for l, layer in enumerate(enc.layers):
                out[f"view/{i}/layer/{l}/weight"] = layer.weight
                out[f"view/{i}/layer/{l}/attn_src"] = layer.attn_src
                out[f"view/{i}/layer/{l}/attn_dst"] = layer.attn_dst
            out[f"view/{i}/decoder/weight"] = dec.layer.weight
            out[f"view/{i}/decoder/attn_src"] = dec.layer.attn_src
            out[f"view/{i}/decoder/attn_dst"] = dec.layer.attn_dst
        out["mask_embedding"] = self.mask_embedding
        for tag, sa in (("feat", self.sa_feat), ("edge", self.sa_edge)):
            out[f"semantic/{tag}/W"] = sa.W
            out[f"semantic/{tag}/b"] = sa.b
            out[f"semantic/{tag}/q"] = sa.q
        return out

    def parameters(self) -> list[Value]:
        return list(self.named_parameters().values())

    def save(self, path: str | Path, config: PretrainConfig) -> Path:
        params = {k: v.payload for k, v in self.named_parameters().items()}
        return save_checkpoint(path, "pretrain_state", params, config=asdict(config), manifest={"view_names": self.view_names})

    @classmethod
    def load(cls, path: str | Path) -> tuple["PretrainState", PretrainConfig]:
        arrays, config, manifest = load_checkpoint(path, kind="pretrain_state")
        cfg = PretrainConfig(**config)
        state = cls.init(cfg, manifest["view_names"])
        for k, v in state.named_parameters().items():
            v.payload = arrays[k].copy()
        return state, cfg


def select_masked_nodes(n: int, r1: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.flatnonzero(rng.random(n) < r1)


def mask_features(x, r1: float, mask_emb: Value, seed: int) -> tuple[Value, np.ndarray]:
    """Replace each row with probability ``r1`` by the (learnable) mask embedding."""
    if not 0.0 <= r1 < 1.0:
        raise ConfigError(f"r1 must lie in [0, 1), got {r1}")
    x = x if isinstance(x, Value) else Value(x)
    masked = select_masked_nodes(x.shape[0], r1, seed)
    if masked.size == 0:
        return x, masked
    sel = np.zeros((x.shape[0], 1))
    sel[masked] = 1.0
    kept = dc.mul(x, Value(1.0 - sel))
    return dc.add(kept, dc.mul(Value(sel), mask_emb)), masked


def mask_edges(view: MetaPathView | np.ndarray, r2: float, seed: int) -> np.ndarray:
    """Drop each undirected off-diagonal link with probability ``r2``; self-loops stay."""
    if not 0.0 <= r2 < 1.0:
        raise ConfigError(f"r2 must lie in [0, 1), got {r2}")
    adj = view.adjacency if isinstance(view, MetaPathView) else np.asarray(view, dtype=np.float64)
    a, b = np.nonzero(np.triu(adj, k=1))
    rng = np.random.default_rng(seed)
    drop = rng.random(a.size) < r2
    out = adj.copy()
    out[a[drop], b[drop]] = 0.0
    out[b[drop], a[drop]] = 0.0
    return out


def _feature_task(state: PretrainState, i: int, view: MetaPathView, x: Value, config: PretrainConfig, seed: int):
    x_tilde, masked = mask_features(x, config.r1, state.mask_embedding, seed)
    if masked.size == 0:
        log.info("view %s: empty masked set, feature task skipped", view.meta_path.name)
        return Value(0.0), x_tilde, masked
    h, _ = encode_view(state.encoders[i], view.adjacency, x_tilde)
    x_hat = decode_view(state.decoders[i], view.adjacency, h)
    target = x.payload if config.recon_target == "original" else x_tilde.payload
    return dc.scaled_cosine_error(x_hat, target, masked, config.gamma1), x_tilde, masked


def feature_reconstruction_loss(state: PretrainState, view_index: int, view: MetaPathView, x, config: PretrainConfig, seed: int) -> Value:
    """Scaled cosine error of reconstructed masked rows; a constant 0 when nothing is masked."""
    x = x if isinstance(x, Value) else Value(x)
    return _feature_task(state, view_index, view, x, config, seed)[0]


def edge_reconstruction_loss(state: PretrainState, view_index: int, view: MetaPathView, x, config: PretrainConfig, seed: int) -> Value:
    """Scaled cosine error between rows of ``sigmoid(Z Z^T)`` and the full adjacency."""
    masked_adj = mask_edges(view, config.r2, seed)
    h, _ = encode_view(state.encoders[view_index], masked_adj, x)
    z = decode_view(state.decoders[view_index], masked_adj, h)
    a_hat = dc.sigmoid(dc.matmul(z, dc.transpose(z)))
    return dc.scaled_cosine_error(a_hat, view.adjacency, np.arange(view.num_nodes), config.gamma2)


@dataclass
class EpochDiagnostics:
    epoch: int
    loss: float
    feat_losses: list[float]
    edge_losses: list[float]
    w_feat: list[float]
    w_edge: list[float]
    masked_fraction: list[float]


def pretrain_losses(state: PretrainState, views: Sequence[MetaPathView], config: PretrainConfig, epoch: int) -> tuple[Value, EpochDiagnostics]:
    """Forward pass of one epoch: combined loss plus per-view diagnostics (no update)."""
    if not views:
        raise ConfigError("pre-training needs at least one view")
    feat_losses, edge_losses, masked_inputs, clean_inputs, fractions = [], [], [], [], []
    for i, view in enumerate(views):
        x = Value(view.features)
        lf, x_tilde, masked = _feature_task(state, i, view, x, config, derive_seed(config.seed, epoch, i, FEATURE_TASK))
        le = edge_reconstruction_loss(state, i, view, x, config, derive_seed(config.seed, epoch, i, EDGE_TASK))
        feat_losses.append(lf)
        edge_losses.append(le)
        masked_inputs.append(x_tilde)
        clean_inputs.append(x)
        fractions.append(masked.size / view.num_nodes)
    w_f = semantic_scores(state.sa_feat, masked_inputs)
    w_e = semantic_scores(state.sa_edge, clean_inputs)
    l_feat = dc.matmul(w_f, dc.hstack(feat_losses).T)
    l_edge = dc.matmul(w_e, dc.hstack(edge_losses).T)
    total = dc.add(l_feat, dc.scale(l_edge, config.lambda_edge))
    diag = EpochDiagnostics(
        epoch=epoch,
        loss=total.item(),
        feat_losses=[v.item() for v in feat_losses],
        edge_losses=[v.item() for v in edge_losses],
        w_feat=w_f.payload.ravel().tolist(),
        w_edge=w_e.payload.ravel().tolist(),
        masked_fraction=fractions,
    )
    return total, diag


def pretrain_epoch(state: PretrainState, views: Sequence[MetaPathView], config: PretrainConfig, epoch: int) -> tuple[float, EpochDiagnostics]:
    """Combined loss, backward pass and one Adam step on every pre-training parameter."""
    params = state.parameters()
    dc.zero_grad(params)
    with Tape():
        try:
            total, diag = pretrain_losses(state, views, config, epoch)
        except NumericalError as exc:
            raise NumericalError(f"pre-training epoch {epoch}: {exc}") from exc
        if not np.isfinite(diag.loss):
            raise NumericalError(f"pre-training epoch {epoch}: non-finite loss {diag}")
        dc.backward(total)
    dc.adam_step(params, config.lr, state=state.adam)
    return diag.loss, diag


def run_pretraining(views: Sequence[MetaPathView], config: PretrainConfig, callback: Callable[[EpochDiagnostics], None] | None = None) -> tuple[PretrainState, list[EpochDiagnostics]]:
    for v in views:
        if v.features is None or v.features.shape[1] != config.F:
            raise ConfigError(f"view {v.meta_path.name!r} needs features aligned to F={config.F}")
    state = PretrainState.init(config, [v.meta_path.name for v in views])
    history = []
    for epoch in range(config.epochs):
        _, diag = pretrain_epoch(state, views, config, epoch)
        history.append(diag)
        if callback is not None:
            callback(diag)
    return state, history


def export_expert_pool(state: PretrainState) -> ExpertPool:
    """Frozen copies of every encoder layer, indexed ``[layer][view]``."""
    num_layers = len(state.encoders[0].layers)
    layers = [[enc.layers[l] for enc in state.encoders] for l in range(num_layers)]
    return ExpertPool(layers, state.view_names)
