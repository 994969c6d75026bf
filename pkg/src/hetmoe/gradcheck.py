"""Finite-difference verification of every differentiable operation.

Each case builds a random instance, returns a scalar function of one input
array plus the tape gradient at that input, and is compared against central
differences.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .diffcore import Tape, Value
from .encoders import GatLayerParams, SemanticAttentionParams, ViewEncoder, encode_view, gat_forward, semantic_scores
from .prompttune import PromptSet, fuse_views, predict

STEP = 1e-6
TOLERANCE = 1e-4


def _away_from_zero(rng: np.random.Generator, shape, margin: float = 0.05) -> np.ndarray:
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def _random_adjacency(rng: np.random.Generator, n: int, p: float = 0.4) -> np.ndarray:
    a = np.triu(rng.random((n, n)) < p, k=1)
    a = a | a.T
    np.fill_diagonal(a, True)
    return a.astype(np.float64)


def _tape_grad(build: Callable[[Value], Value], x0: np.ndarray) -> np.ndarray:
    v = Value(x0, requires_grad=True)
    with Tape():
        loss = build(v)
        dc.backward(loss)
    return v.grad if v.grad is not None else np.zeros_like(x0)


def _value(build: Callable[[Value], Value], x: np.ndarray) -> float:
    with Tape():
        return build(Value(x)).item()


def _weighted(out: Value, w: np.ndarray) -> Value:
    """Random linear functional of a matrix output, so every entry's gradient is exercised."""
    return dc.sum_all(dc.mul(out, Value(w)))


# each case: rng -> (build(Value) -> scalar Value, x0)
def case_matmul(rng):
    b = rng.standard_normal((4, 2))
    w = rng.standard_normal((3, 2))
    return (lambda a: _weighted(dc.matmul(a, b), w)), rng.standard_normal((3, 4))


def case_matmul_right(rng):
    a = rng.standard_normal((3, 4))
    w = rng.standard_normal((3, 2))
    return (lambda b: _weighted(dc.matmul(a, b), w)), rng.standard_normal((4, 2))


def case_broadcast_add_mul(rng):
    m = rng.standard_normal((5, 3))
    w = rng.standard_normal((5, 3))
    return (lambda row: _weighted(dc.mul(dc.add(m, row), dc.add(row, 1.5)), w)), rng.standard_normal((1, 3))


def case_transpose_sub(rng):
    m = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 3))
    return (lambda x: _weighted(dc.sub(dc.transpose(x), dc.transpose(m)), w)), rng.standard_normal((3, 4))


def case_take_rows(rng):
    w = rng.standard_normal((4, 3))
    return (lambda x: _weighted(dc.take_rows(x, [2, 0, 2, 1]), w)), rng.standard_normal((3, 3))


def case_mean_rows(rng):
    w = rng.standard_normal((1, 4))
    return (lambda x: _weighted(dc.mean_rows(x), w)), rng.standard_normal((5, 4))


def case_softmax(rng):
    w = rng.standard_normal((3, 5))
    return (lambda x: _weighted(dc.rowwise_softmax(x), w)), rng.standard_normal((3, 5))


def case_masked_softmax(rng):
    mask = _random_adjacency(rng, 5) > 0
    w = rng.standard_normal((5, 5))
    return (lambda x: _weighted(dc.masked_rowwise_softmax(x, mask), w)), rng.standard_normal((5, 5))


def _elementwise_case(kind):
    def case(rng):
        w = rng.standard_normal((3, 4))
        if kind == "log":
            x0 = rng.uniform(0.2, 3.0, size=(3, 4))
        elif kind in ("leaky_relu", "elu"):
            x0 = _away_from_zero(rng, (3, 4))
        else:
            x0 = rng.standard_normal((3, 4))
        return (lambda x: _weighted(dc.elementwise(x, kind, slope=0.2), w)), x0

    case.__name__ = f"case_{kind}"
    return case


def _cosine_case(gamma):
    def case(rng):
        target = rng.standard_normal((6, 4))
        rows = rng.choice(6, size=4, replace=False)
        return (lambda p: dc.scaled_cosine_error(p, target, rows, gamma)), rng.standard_normal((6, 4))

    case.__name__ = f"case_scaled_cosine_gamma{gamma}"
    return case


def case_cross_entropy(rng):
    labels = rng.integers(0, 3, size=6)
    rows = np.array([0, 2, 3, 5])
    return (lambda z: dc.cross_entropy(z, labels, rows)), rng.standard_normal((6, 3))


def case_hstack_weighted_sum(rng):
    hs = [rng.standard_normal((4, 3)) for _ in range(3)]
    w = rng.standard_normal((4, 3))
    return (lambda beta: _weighted(dc.weighted_sum(hs, dc.rowwise_softmax(beta)), w)), rng.standard_normal((1, 3))


def _gat_params(rng, in_dim, out_dim, activation="elu"):
    return GatLayerParams.init(in_dim, out_dim, rng, activation=activation, trainable=False)


def case_gat_input(rng):
    adj = _random_adjacency(rng, 6)
    p = _gat_params(rng, 4, 3)
    w = rng.standard_normal((6, 3))
    return (lambda h: _weighted(gat_forward(p, adj, h), w)), rng.standard_normal((6, 4))


def case_gat_weight(rng):
    adj = _random_adjacency(rng, 6)
    p = _gat_params(rng, 4, 3, activation="identity")
    h = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 3))

    def build(weight):
        q = GatLayerParams(weight, p.attn_src, p.attn_dst, p.leaky_slope, p.activation)
        return _weighted(gat_forward(q, adj, h), w)

    return build, p.weight.payload.copy()


def case_gat_attention(rng):
    adj = _random_adjacency(rng, 6)
    p = _gat_params(rng, 4, 3)
    h = rng.standard_normal((6, 4))
    w = rng.standard_normal((6, 3))

    def build(both):
        # rows 0-2 source vector, rows 3-5 destination vector
        q = GatLayerParams(p.weight, dc.take_rows(both, [0, 1, 2]), dc.take_rows(both, [3, 4, 5]), p.leaky_slope, p.activation)
        return _weighted(gat_forward(q, adj, h), w)

    return build, rng.standard_normal((6, 1))


def case_encode_two_layers(rng):
    adj = _random_adjacency(rng, 7)
    enc = ViewEncoder([_gat_params(rng, 4, 3), _gat_params(rng, 3, 3)])
    w = rng.standard_normal((7, 3))
    return (lambda x: _weighted(encode_view(enc, adj, x)[0], w)), rng.standard_normal((7, 4))


def case_semantic_attention(rng):
    sa = SemanticAttentionParams.init(4, 3, rng)
    sa = SemanticAttentionParams(Value(sa.W.payload), Value(rng.standard_normal((1, 3))), Value(sa.q.payload))
    others = [rng.standard_normal((5, 4)) for _ in range(2)]
    w = rng.standard_normal((1, 3))
    return (lambda x: _weighted(semantic_scores(sa, [x] + others), w)), rng.standard_normal((5, 4))


def _prompt_setup(rng):
    hs = [Value(rng.standard_normal((6, 4))) for _ in range(3)]
    ps = PromptSet.init(3, 4, 3, rng)
    labels = rng.integers(0, 3, size=6)
    return hs, ps, labels


def case_prompt_vector(rng):
    hs, ps, labels = _prompt_setup(rng)
    ps.prompts = [Value(rng.standard_normal((1, 4))) for _ in range(3)]
    j = int(rng.integers(0, 3))

    def build(p):
        prompts = list(ps.prompts)
        prompts[j] = p
        local = PromptSet(prompts, ps.classifier_weight, ps.classifier_bias)
        h, _ = fuse_views(hs, local)
        return dc.cross_entropy(predict(h, local), labels, np.arange(6))

    return build, rng.standard_normal((1, 4))


def case_classifier_weight(rng):
    hs, ps, labels = _prompt_setup(rng)
    ps.prompts = [Value(rng.standard_normal((1, 4))) for _ in range(3)]

    def build(wc):
        local = PromptSet(ps.prompts, wc, ps.classifier_bias)
        h, _ = fuse_views(hs, local)
        return dc.cross_entropy(predict(h, local), labels, np.arange(6))

    return build, rng.standard_normal((4, 3))


CASES: list[Callable] = [
    case_matmul,
    case_matmul_right,
    case_broadcast_add_mul,
    case_transpose_sub,
    case_take_rows,
    case_mean_rows,
    case_softmax,
    case_masked_softmax,
    *[_elementwise_case(k) for k in ("tanh", "sigmoid", "exp", "log", "leaky_relu", "elu")],
    *[_cosine_case(g) for g in (1.0, 2.0, 3.0)],
    case_cross_entropy,
    case_hstack_weighted_sum,
    case_gat_input,
    case_gat_weight,
    case_gat_attention,
    case_encode_two_layers,
    case_semantic_attention,
    case_prompt_vector,
    case_classifier_weight,
]


@dataclass
class CheckResult:
    name: str
    instances: int
    worst_error: float

    @property
    def passed(self) -> bool:
        return self.worst_error < TOLERANCE


def check_case(case: Callable, instances: int = 20, seed: int = 0) -> CheckResult:
    worst = 0.0
    for k in range(instances):
        rng = np.random.default_rng([seed, k, zlib.crc32(case.__name__.encode())])
        build, x0 = case(rng)
        analytic = _tape_grad(build, x0)
        numeric = dc.numeric_gradient(lambda x: _value(build, x), x0, STEP)
        worst = max(worst, dc.relative_error(analytic, numeric))
    return CheckResult(case.__name__.removeprefix("case_"), instances, worst)


def run_suite(instances: int = 20, seed: int = 0) -> list[CheckResult]:
    return [check_case(c, instances, seed) for c in CASES]
