"""Single-head graph attention layers, per-view encoder stacks and semantic attention."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .diffcore import Value
from .errors import ConfigError, DimensionError

ACTIVATIONS = ("elu", "identity")


def _uniform(rng: np.random.Generator, shape: tuple[int, int], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class GatLayerParams:
    weight: Value  # in_dim x out_dim
    attn_src: Value  # out_dim x 1
    attn_dst: Value  # out_dim x 1
    leaky_slope: float = 0.2
    activation: str = "elu"

    def __post_init__(self):
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        out_dim = self.weight.shape[1]
        for a in (self.attn_src, self.attn_dst):
            if a.shape != (out_dim, 1):
                raise DimensionError(f"attention vector shape {a.shape}, expected ({out_dim}, 1)")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, activation: str = "elu", leaky_slope: float = 0.2, trainable: bool = True) -> "GatLayerParams":
        return cls(
            weight=Value(_uniform(rng, (in_dim, out_dim), in_dim), requires_grad=trainable),
            attn_src=Value(_uniform(rng, (out_dim, 1), out_dim), requires_grad=trainable),
            attn_dst=Value(_uniform(rng, (out_dim, 1), out_dim), requires_grad=trainable),
            leaky_slope=leaky_slope,
            activation=activation,
        )

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Value]:
        return [self.weight, self.attn_src, self.attn_dst]

    def frozen_copy(self) -> "GatLayerParams":
        return GatLayerParams(
            weight=Value(self.weight.payload.copy()),
            attn_src=Value(self.attn_src.payload.copy()),
            attn_dst=Value(self.attn_dst.payload.copy()),
            leaky_slope=self.leaky_slope,
            activation=self.activation,
        )


def attention_weights(params: GatLayerParams, adjacency: np.ndarray, h) -> tuple[Value, Value]:
    """Return ``(alpha, Wh)``: neighbor attention (rows sum to 1) and projected features."""
    h = h if isinstance(h, Value) else Value(h)
    if h.shape[1] != params.in_dim:
        raise DimensionError(f"GAT input has {h.shape[1]} columns, layer expects {params.in_dim}")
    if adjacency.shape != (h.shape[0], h.shape[0]):
        raise DimensionError(f"adjacency {adjacency.shape} does not match {h.shape[0]} nodes")
    wh = dc.matmul(h, params.weight)
    src = dc.matmul(wh, params.attn_src)
    dst = dc.matmul(wh, params.attn_dst)
    scores = dc.leaky_relu(dc.add(src, dc.transpose(dst)), params.leaky_slope)
    alpha = dc.masked_rowwise_softmax(scores, adjacency > 0)
    return alpha, wh


def gat_forward(params: GatLayerParams, adjacency: np.ndarray, h) -> Value:
    """``act(sum_b alpha_ab W h_b)`` with ``alpha_ab`` a softmax over the neighbors of ``a``."""
    alpha, wh = attention_weights(params, adjacency, h)
    out = dc.matmul(alpha, wh)
    return dc.elu(out) if params.activation == "elu" else out


@dataclass
class ViewEncoder:
    layers: list[GatLayerParams]

    @classmethod
    def init(cls, in_dim: int, hidden: int, num_layers: int, rng: np.random.Generator) -> "ViewEncoder":
        if num_layers < 1:
            raise ConfigError("encoder needs at least one layer")
        dims = [in_dim] + [hidden] * num_layers
        return cls([GatLayerParams.init(dims[i], dims[i + 1], rng) for i in range(num_layers)])

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionError("encoder layer dimensions do not chain")

    def parameters(self) -> list[Value]:
        return [p for layer in self.layers for p in layer.parameters()]


def encode_view(enc: ViewEncoder, adjacency: np.ndarray, x) -> tuple[Value, list[Value]]:
    """Run the stack; returns the final output and every layer's output in order."""
    h = x
    outputs = []
    for layer in enc.layers:
        h = gat_forward(layer, adjacency, h)
        outputs.append(h)
    return h, outputs


@dataclass
class ViewDecoder:
    layer: GatLayerParams

    @classmethod
    def init(cls, hidden: int, out_dim: int, rng: np.random.Generator) -> "ViewDecoder":
        return cls(GatLayerParams.init(hidden, out_dim, rng, activation="identity"))

    def parameters(self) -> list[Value]:
        return self.layer.parameters()


def decode_view(dec: ViewDecoder, adjacency: np.ndarray, h) -> Value:
    return gat_forward(dec.layer, adjacency, h)


@dataclass
class SemanticAttentionParams:
    W: Value  # F x d_a
    b: Value  # 1 x d_a
    q: Value  # d_a x 1

    @classmethod
    def init(cls, in_dim: int, attn_dim: int, rng: np.random.Generator) -> "SemanticAttentionParams":
        return cls(
            W=Value(_uniform(rng, (in_dim, attn_dim), in_dim), requires_grad=True),
            b=Value(np.zeros((1, attn_dim)), requires_grad=True),
            q=Value(_uniform(rng, (attn_dim, 1), attn_dim), requires_grad=True),
        )

    def parameters(self) -> list[Value]:
        return [self.W, self.b, self.q]


def semantic_logits(sa: SemanticAttentionParams, per_view_inputs: Sequence) -> Value:
    """``1 x P`` row of per-view scores: node-mean of ``q . tanh(W x_v + b)``."""
    if not per_view_inputs:
        raise ConfigError("semantic attention needs at least one view")
    scores = []
    for x in per_view_inputs:
        t = dc.tanh(dc.add(dc.matmul(x, sa.W), sa.b))
        scores.append(dc.mean_rows(dc.matmul(t, sa.q)))
    return dc.hstack(scores)


def semantic_scores(sa: SemanticAttentionParams, per_view_inputs: Sequence) -> Value:
    """Softmax of :func:`semantic_logits` over views."""
    return dc.rowwise_softmax(semantic_logits(sa, per_view_inputs))
