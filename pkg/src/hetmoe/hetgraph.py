"""Heterogeneous graphs, meta-path views, feature alignment, dataset I/O.

A dataset directory holds four files:

``manifest.json``
    ``node_types`` (name -> count), ``target_type``, ``relations``
    (list of ``{name, src, dst}``), ``meta_paths`` (name -> list of
    relation names), ``num_classes``.
``edges.tsv``
    ``src_id<TAB>relation<TAB>dst_id`` per line, 0-based ids local to the
    relation's endpoint types.
``features.csv``
    row ``i`` holds the comma-separated raw features of target node ``i``.
``labels.tsv`` (optional)
    ``node_id<TAB>class_index``, one line per target node.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import sparse

from .errors import ConfigError, DataError, MetaPathError, SamplingError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Relation:
    name: str
    src: str
    dst: str


@dataclass(frozen=True)
class MetaPath:
    name: str
    relation_sequence: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "relation_sequence", tuple(self.relation_sequence))


@dataclass
class HeteroGraph:
    node_types: dict[str, int]
    target_type: str
    relations: list[Relation]
    edges: dict[str, np.ndarray]  # relation name -> (E, 2) int array of (src_id, dst_id)
    raw_features: np.ndarray
    labels: np.ndarray | None = None
    meta_paths: list[MetaPath] = field(default_factory=list)
    num_classes: int | None = None

    def __post_init__(self):
        self.raw_features = np.asarray(self.raw_features, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
        self.edges = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2) for k, v in self.edges.items()}
        for r in self.relations:
            self.edges.setdefault(r.name, np.zeros((0, 2), dtype=np.int64))
        if self.num_classes is None and self.labels is not None and self.labels.size:
            self.num_classes = int(self.labels.max()) + 1
        self.validate()

    @property
    def num_targets(self) -> int:
        return self.node_types[self.target_type]

    def relation(self, name: str) -> Relation:
        for r in self.relations:
            if r.name == name:
                return r
        raise MetaPathError(f"unknown relation {name!r}")

    def meta_path(self, name: str) -> MetaPath:
        for p in self.meta_paths:
            if p.name == name:
                return p
        raise MetaPathError(f"unknown meta-path {name!r}")

    def edge_list(self) -> list[tuple[int, str, int]]:
        """All edges as ``(src_id, relation, dst_id)`` in relation declaration order."""
        return [(int(s), r.name, int(d)) for r in self.relations for s, d in self.edges[r.name]]

    def validate(self) -> None:
        if len(self.node_types) + len(self.relations) <= 2:
            raise ValidationError("heterogeneous graph needs |node types| + |relations| > 2")
        if self.target_type not in self.node_types:
            raise ValidationError(f"target type {self.target_type!r} is not a declared node type")
        names = [r.name for r in self.relations]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate relation names")
        for r in self.relations:
            for t in (r.src, r.dst):
                if t not in self.node_types:
                    raise ValidationError(f"relation {r.name!r} references unknown type {t!r}")
        for name in self.edges:
            if name not in names:
                raise ValidationError(f"edges given for undeclared relation {name!r}")
        for r in self.relations:
            e = self.edges[r.name]
            if e.size and (e.min() < 0 or e[:, 0].max() >= self.node_types[r.src] or e[:, 1].max() >= self.node_types[r.dst]):
                raise ValidationError(f"relation {r.name!r} has an endpoint id outside its type's count")
        n = self.num_targets
        if self.raw_features.ndim != 2 or self.raw_features.shape[0] != n:
            raise ValidationError(f"features must be {n} x D, got {self.raw_features.shape}")
        if not np.all(np.isfinite(self.raw_features)):
            raise DataError("non-finite raw features")
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise ValidationError(f"labels must cover exactly {n} target nodes")
            if self.labels.min(initial=0) < 0 or (self.num_classes is not None and self.labels.max(initial=0) >= self.num_classes):
                raise ValidationError("label outside [0, num_classes)")
        for p in self.meta_paths:
            check_meta_path(self, p)


def check_meta_path(g: HeteroGraph, p: MetaPath) -> None:
    seq = p.relation_sequence
    if not seq:
        raise MetaPathError(f"meta-path {p.name!r} has no relations")
    rels = [g.relation(r) for r in seq]
    if rels[0].src != g.target_type or rels[-1].dst != g.target_type:
        raise MetaPathError(f"meta-path {p.name!r} must start and end at {g.target_type!r}")
    for a, b in zip(rels, rels[1:]):
        if a.dst != b.src:
            raise MetaPathError(f"meta-path {p.name!r}: {a.name} ends at {a.dst!r} but {b.name} starts at {b.src!r}")


# ---------------------------------------------------------------- views


@dataclass(frozen=True)
class MetaPathView:
    """Binary symmetric target-node adjacency induced by one meta-path, with self-loops."""

    meta_path: MetaPath
    adjacency: np.ndarray
    features: np.ndarray | None = None

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return self.adjacency > 0

    @property
    def neighbor_lists(self) -> list[np.ndarray]:
        return [np.flatnonzero(row) for row in self.adjacency]

    def with_features(self, x: np.ndarray) -> "MetaPathView":
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.num_nodes:
            raise ValidationError(f"features have {x.shape[0]} rows, view has {self.num_nodes} nodes")
        return replace(self, features=x)

    def with_adjacency(self, adjacency: np.ndarray) -> "MetaPathView":
        return replace(self, adjacency=adjacency)

    def num_edges(self) -> int:
        """Undirected off-diagonal edge count."""
        return int((np.count_nonzero(self.adjacency) - self.num_nodes) // 2)


def incidence(g: HeteroGraph, relation: str) -> sparse.csr_matrix:
    r = g.relation(relation)
    e = g.edges[relation]
    data = np.ones(e.shape[0])
    m = sparse.csr_matrix((data, (e[:, 0], e[:, 1])), shape=(g.node_types[r.src], g.node_types[r.dst]))
    m.data[:] = 1.0
    m.sum_duplicates()
    m.data[:] = 1.0
    return m


def build_meta_path_view(g: HeteroGraph, p: MetaPath) -> MetaPathView:
    """Compose per-relation incidences along ``p``, binarize, symmetrize, add self-loops."""
    check_meta_path(g, p)
    reach = None
    for name in p.relation_sequence:
        step = incidence(g, name)
        reach = step if reach is None else reach @ step
        reach.data[:] = 1.0
        reach.eliminate_zeros()
    dense = reach.toarray() > 0
    dense = dense | dense.T
    np.fill_diagonal(dense, True)
    return MetaPathView(p, dense.astype(np.float64))


def build_views(g: HeteroGraph, features: np.ndarray | None = None) -> list[MetaPathView]:
    views = [build_meta_path_view(g, p) for p in g.meta_paths]
    if features is not None:
        views = [v.with_features(features) for v in views]
    return views


# ---------------------------------------------------------------- alignment


@dataclass(frozen=True)
class AlignmentReport:
    original_dim: int
    target_dim: int
    retained_energy: float
    padded_cols: int


def svd_align(x: np.ndarray, F: int) -> tuple[np.ndarray, AlignmentReport]:
    """Project onto the top-``F`` left singular directions, scaled by singular values.

    Columns follow descending singular value; each singular vector is flipped
    so its largest-magnitude entry is positive. Directions beyond the
    numerical rank are zero columns.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ConfigError(f"svd_align needs a nonempty 2-D matrix, got shape {x.shape}")
    if F < 1:
        raise ConfigError(f"F must be >= 1, got {F}")
    if not np.all(np.isfinite(x)):
        raise DataError("svd_align: non-finite input")
    u, s, _ = np.linalg.svd(x, full_matrices=False)
    tol = (s[0] if s.size else 0.0) * max(x.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
    k = min(F, rank)
    out = np.zeros((x.shape[0], F))
    for j in range(k):
        col = u[:, j]
        if col[np.argmax(np.abs(col))] < 0:
            col = -col
        out[:, j] = col * s[j]
    total = float(np.sum(s[:rank] ** 2))
    retained = float(np.sum(s[:k] ** 2) / total) if total > 0 else 1.0
    return out, AlignmentReport(x.shape[1], F, retained, F - k)


# ---------------------------------------------------------------- pair sampling


def sample_pairs(view: MetaPathView, K: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``K`` linked and ``K`` unlinked ordered node pairs (``a != b``)."""
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    adj = view.mask
    n = adj.shape[0]
    off = ~np.eye(n, dtype=bool)
    pos_a, pos_b = np.nonzero(adj & off)
    if pos_a.size == 0:
        raise SamplingError(f"view {view.meta_path.name!r} has no edges beyond self-loops")
    n_neg = int(np.count_nonzero(~adj))
    if n_neg == 0:
        raise SamplingError(f"view {view.meta_path.name!r} is complete; no negative pairs")
    rng = np.random.default_rng(seed)
    pick = rng.integers(0, pos_a.size, size=K)
    positives = np.stack([pos_a[pick], pos_b[pick]], axis=1)
    chunks = []
    need = K
    while need > 0:
        batch = max(2 * need, 16)
        c = rng.integers(0, n, size=batch)
        d = rng.integers(0, n, size=batch)
        ok = ~adj[c, d]
        got = np.stack([c[ok], d[ok]], axis=1)[:need]
        chunks.append(got)
        need -= got.shape[0]
    negatives = np.concatenate(chunks, axis=0)
    return positives, negatives


# ---------------------------------------------------------------- I/O


def _manifest(g: HeteroGraph) -> dict[str, Any]:
    return {
        "node_types": dict(g.node_types),
        "target_type": g.target_type,
        "relations": [{"name": r.name, "src": r.src, "dst": r.dst} for r in g.relations],
        "meta_paths": {p.name: list(p.relation_sequence) for p in g.meta_paths},
        "num_classes": g.num_classes,
    }


def save_dataset(g: HeteroGraph, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "manifest.json").write_text(json.dumps(_manifest(g), indent=2) + "\n", encoding="utf-8")
    with open(d / "edges.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for s, r, t in g.edge_list():
            fh.write(f"{s}\t{r}\t{t}\n")
    with open(d / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in g.raw_features:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    labels_path = d / "labels.tsv"
    if g.labels is not None:
        with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
            for i, c in enumerate(g.labels):
                fh.write(f"{i}\t{int(c)}\n")
    elif labels_path.exists():
        labels_path.unlink()
    return d


def graph_from_manifest(manifest: Mapping[str, Any], edges, raw_features, labels=None) -> HeteroGraph:
    try:
        node_types = {str(k): int(v) for k, v in manifest["node_types"].items()}
        relations = [Relation(r["name"], r["src"], r["dst"]) for r in manifest["relations"]]
        meta_paths = [MetaPath(k, tuple(v)) for k, v in manifest["meta_paths"].items()]
        target = manifest["target_type"]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed manifest: {exc}") from exc
    return HeteroGraph(
        node_types=node_types,
        target_type=target,
        relations=relations,
        edges=edges,
        raw_features=raw_features,
        labels=labels,
        meta_paths=meta_paths,
        num_classes=manifest.get("num_classes"),
    )


def load_dataset(directory: str | Path) -> HeteroGraph:
    d = Path(directory)
    for name in ("manifest.json", "edges.tsv", "features.csv"):
        if not (d / name).is_file():
            raise FileNotFoundError(f"{d / name} not found")
    manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    rel_types = {r["name"]: (r["src"], r["dst"]) for r in manifest.get("relations", [])}
    counts = manifest.get("node_types", {})
    buckets: dict[str, list[tuple[int, int]]] = {name: [] for name in rel_types}
    with open(d / "edges.tsv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"edges.tsv line {lineno}: expected 3 tab-separated fields")
            s, r, t = parts
            if r not in rel_types:
                raise ValidationError(f"edges.tsv line {lineno}: unknown relation {r!r}")
            s, t = int(s), int(t)
            src, dst = rel_types[r]
            if not (0 <= s < counts[src] and 0 <= t < counts[dst]):
                raise ValidationError(f"edges.tsv line {lineno}: dangling id in {s}\t{r}\t{t}")
            buckets[r].append((s, t))
    rows = []
    with open(d / "features.csv", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    if len({len(r) for r in rows}) > 1:
        raise ValidationError("features.csv rows have differing lengths")
    features = np.array(rows, dtype=np.float64)
    labels = None
    if (d / "labels.tsv").is_file():
        n = counts.get(manifest.get("target_type"), 0)
        labels = np.full(n, -1, dtype=np.int64)
        with open(d / "labels.tsv", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                i, c = (int(v) for v in line.split("\t"))
                if not 0 <= i < n:
                    raise ValidationError(f"labels.tsv line {lineno}: node id {i} out of range")
                labels[i] = c
        if np.any(labels < 0):
            raise ValidationError("labels.tsv does not cover every target node")
    edges = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in buckets.items()}
    return graph_from_manifest(manifest, edges, features, labels)


# ---------------------------------------------------------------- synthetic data


@dataclass
class SyntheticMetaPath:
    """One meta-path realized through its own intermediate node type.

    Every sampled target-level link (a, b) becomes a fresh intermediate node
    joined to both a and b, so the induced adjacency is exactly the sampled
    block-model graph.
    """

    name: str
    via: str
    within: float
    cross: float


@dataclass
class SyntheticSpec:
    num_nodes: int
    num_classes: int
    feature_dim: int = 32
    separation: float = 1.0
    noise: float = 1.0
    center_seed: int = 0
    target_type: str = "P"
    meta_paths: list[SyntheticMetaPath] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SyntheticSpec":
        d = dict(d)
        mps = [m if isinstance(m, SyntheticMetaPath) else SyntheticMetaPath(**m) for m in d.pop("meta_paths", [])]
        return cls(meta_paths=mps, **d)

    def to_dict(self) -> dict[str, Any]:
        out = {k: getattr(self, k) for k in ("num_nodes", "num_classes", "feature_dim", "separation", "noise", "center_seed", "target_type")}
        out["meta_paths"] = [vars(m).copy() for m in self.meta_paths]
        return out


def class_centers(num_classes: int, dim: int, separation: float, seed: int) -> np.ndarray:
    """``num_classes`` mutually orthogonal centers of norm ``separation``."""
    rng = np.random.default_rng(seed)
    k = max(num_classes, dim)
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    return separation * q[:num_classes, :dim] / np.linalg.norm(q[:num_classes, :dim], axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec | Mapping[str, Any], seed: int) -> HeteroGraph:
    """Class-structured heterogeneous graph with per-meta-path block connectivity."""
    if not isinstance(spec, SyntheticSpec):
        spec = SyntheticSpec.from_dict(spec)
    n, c = spec.num_nodes, spec.num_classes
    if n < 1 or c < 1:
        raise ConfigError("num_nodes and num_classes must be positive")
    if not spec.meta_paths:
        raise ConfigError("synthetic spec declares no meta-paths")
    if spec.feature_dim < c:
        raise ConfigError("feature_dim must be at least num_classes")
    vias = [m.via for m in spec.meta_paths]
    if len(set(vias)) != len(vias) or spec.target_type in vias:
        raise ConfigError("every meta-path needs its own intermediate type distinct from the target type")
    for m in spec.meta_paths:
        for p in (m.within, m.cross):
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"meta-path {m.name!r}: probability {p} outside [0, 1]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % c)
    centers = class_centers(c, spec.feature_dim, spec.separation, spec.center_seed)
    features = centers[labels] + spec.noise * rng.standard_normal((n, spec.feature_dim))
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    t = spec.target_type
    node_types = {t: n}
    relations: list[Relation] = []
    edges: dict[str, np.ndarray] = {}
    meta_paths = []
    for m in spec.meta_paths:
        prob = np.where(same, m.within, m.cross)
        keep = rng.random(iu.size) < prob
        a, b = iu[keep], ju[keep]
        k = a.size
        node_types[m.via] = max(k, 1)
        fwd, back = f"{t}-{m.via}", f"{m.via}-{t}"
        relations += [Relation(fwd, t, m.via), Relation(back, m.via, t)]
        mid = np.arange(k)
        tv = np.concatenate([np.stack([a, mid], 1), np.stack([b, mid], 1)])
        tv = tv[np.lexsort((tv[:, 1], tv[:, 0]))]
        edges[fwd] = tv
        edges[back] = tv[:, ::-1].copy()
        meta_paths.append(MetaPath(m.name, (fwd, back)))
    return HeteroGraph(
        node_types=node_types,
        target_type=t,
        relations=relations,
        edges=edges,
        raw_features=features,
        labels=labels,
        meta_paths=meta_paths,
        num_classes=c,
    )


def homophily(view: MetaPathView, labels: Sequence[int]) -> float:
    """Fraction of off-diagonal links joining same-class nodes."""
    labels = np.asarray(labels)
    a, b = np.nonzero(np.triu(view.mask, k=1))
    if a.size == 0:
        return float("nan")
    return float(np.mean(labels[a] == labels[b]))
