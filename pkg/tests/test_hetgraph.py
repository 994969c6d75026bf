import json
from itertools import product

import numpy as np
import pytest
from scipy import stats
from scipy.sparse.linalg import eigsh

from hetmoe.errors import ConfigError, MetaPathError, SamplingError, ValidationError
from hetmoe.hetgraph import (
    HeteroGraph,
    MetaPath,
    MetaPathView,
    Relation,
    SyntheticMetaPath,
    SyntheticSpec,
    build_meta_path_view,
    build_views,
    generate_synthetic,
    homophily,
    load_dataset,
    sample_pairs,
    save_dataset,
    svd_align,
)

RELS = [Relation("P-A", "P", "A"), Relation("A-P", "A", "P"), Relation("P-S", "P", "S"), Relation("S-P", "S", "P")]
PATHS = [MetaPath("PAP", ("P-A", "A-P")), MetaPath("PSP", ("P-S", "S-P")), MetaPath("PAPSP", ("P-A", "A-P", "P-S", "S-P"))]


def random_graph(rng, n_p, n_a, n_s, p=0.15):
    pa = np.argwhere(rng.random((n_p, n_a)) < p)
    ps = np.argwhere(rng.random((n_p, n_s)) < p)
    edges = {"P-A": pa, "A-P": pa[:, ::-1], "P-S": ps, "S-P": ps[:, ::-1]}
    return HeteroGraph({"P": n_p, "A": n_a, "S": n_s}, "P", RELS, edges, rng.standard_normal((n_p, 3)), meta_paths=PATHS)


def enumerate_paths(g, p):
    """Brute force: walk every relation sequence instance from every start node."""
    n = g.num_targets
    out = np.zeros((n, n), dtype=bool)
    adj = {}
    for r in g.relations:
        lists = {}
        for s, t in g.edges[r.name]:
            lists.setdefault(int(s), []).append(int(t))
        adj[r.name] = lists

    def walk(node, depth):
        if depth == len(p.relation_sequence):
            yield node
            return
        for nxt in adj[p.relation_sequence[depth]].get(node, []):
            yield from walk(nxt, depth + 1)

    for a in range(n):
        for b in walk(a, 0):
            out[a, b] = out[b, a] = True
    np.fill_diagonal(out, True)
    return out


# ---------------------------------------------------------------- meta-path adjacency


def test_toy_pap_adjacency():
    # papers 0,1 share author 0; paper 2 has author 1; papers 3,4 share author 2, paper 4 also author 0
    pa = np.array([[0, 0], [1, 0], [2, 1], [3, 2], [4, 2], [4, 0]])
    g = HeteroGraph({"P": 5, "A": 3}, "P", RELS[:2], {"P-A": pa, "A-P": pa[:, ::-1]}, np.ones((5, 2)), meta_paths=PATHS[:1])
    v = build_meta_path_view(g, g.meta_paths[0])
    hand = np.eye(5, dtype=bool)
    for a, b in [(0, 1), (0, 4), (1, 4), (3, 4)]:
        hand[a, b] = hand[b, a] = True
    np.testing.assert_array_equal(v.mask, hand)
    np.testing.assert_array_equal(v.mask, enumerate_paths(g, g.meta_paths[0]))
    assert v.adjacency[0, 1] == 1.0


def test_no_shared_intermediates_gives_identity():
    pa = np.array([[0, 0], [1, 1], [2, 2]])
    g = HeteroGraph({"P": 3, "A": 3}, "P", RELS[:2], {"P-A": pa, "A-P": pa[:, ::-1]}, np.ones((3, 2)), meta_paths=PATHS[:1])
    np.testing.assert_array_equal(build_meta_path_view(g, g.meta_paths[0]).adjacency, np.eye(3))


def test_invalid_meta_paths_rejected():
    g = random_graph(np.random.default_rng(0), 5, 3, 3)
    with pytest.raises(MetaPathError):
        build_meta_path_view(g, MetaPath("empty", ()))
    with pytest.raises(MetaPathError):
        build_meta_path_view(g, MetaPath("PAS", ("P-A", "P-S")))
    with pytest.raises(MetaPathError):
        build_meta_path_view(g, MetaPath("PA", ("P-A",)))


@pytest.mark.parametrize("trial", range(100))
def test_adjacency_matches_enumeration_oracle(trial):
    rng = np.random.default_rng(trial)
    n_p, n_a, n_s = rng.integers(2, 13), rng.integers(1, 10), rng.integers(1, 8)
    g = random_graph(rng, n_p, n_a, n_s, p=rng.uniform(0.05, 0.4))
    for p in g.meta_paths:
        v = build_meta_path_view(g, p)
        np.testing.assert_array_equal(v.mask, enumerate_paths(g, p))
        assert np.all(np.diag(v.adjacency) == 1.0) and np.array_equal(v.adjacency, v.adjacency.T)
        assert [list(x) for x in v.neighbor_lists] == [list(np.flatnonzero(row)) for row in v.mask]


# ---------------------------------------------------------------- svd_align


def test_svd_align_orthonormal_input_recovered_up_to_sign():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((8, 3)))
    out, rep = svd_align(q, 3)
    # columns may be permuted among equal singular values; compare the projector
    np.testing.assert_allclose(out @ out.T, q @ q.T, atol=1e-12)
    assert rep.retained_energy == pytest.approx(1.0) and rep.padded_cols == 0


def test_svd_align_rank_deficient_pads():
    x = np.outer(np.arange(1.0, 6.0), [1.0, -2.0, 0.5, 3.0])
    out, rep = svd_align(x, 3)
    assert out.shape == (5, 3)
    np.testing.assert_array_equal(out[:, 1:], 0.0)
    assert rep.padded_cols == 2 and rep.retained_energy == pytest.approx(1.0, abs=1e-12)
    # sign convention: largest-magnitude entry of the singular vector is positive
    assert out[np.argmax(np.abs(out[:, 0])), 0] > 0


@pytest.mark.parametrize("seed", range(10))
def test_svd_align_gram_matches_eigensolver_oracle(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((6, 10))
    F = 4
    out, rep = svd_align(x, F)
    lam, v = eigsh(x.T @ x, k=F, which="LM")
    best = x @ v @ v.T
    np.testing.assert_allclose(out @ out.T, best @ best.T, atol=1e-8)
    s = np.linalg.svd(x, compute_uv=False)
    assert rep.retained_energy == pytest.approx(np.sum(s[:F] ** 2) / np.sum(s**2), abs=1e-10)


def test_svd_align_energy_monotone_and_nonfinite_rejected():
    x = np.random.default_rng(2).standard_normal((12, 7))
    energies = [svd_align(x, F)[1].retained_energy for F in range(1, 9)]
    assert all(a <= b + 1e-15 for a, b in zip(energies, energies[1:]))
    x[0, 0] = np.nan
    with pytest.raises(ValidationError):
        svd_align(x, 3)


# ---------------------------------------------------------------- dataset files


def write_manifest_dir(path, node_types, relations, meta_paths, num_classes, target, edges, D=2):
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "node_types": node_types,
        "target_type": target,
        "relations": [{"name": n, "src": s, "dst": d} for n, s, d in relations],
        "meta_paths": meta_paths,
        "num_classes": num_classes,
    }
    (path / "manifest.json").write_text(json.dumps(manifest))
    (path / "edges.tsv").write_text("".join(f"{s}\t{r}\t{t}\n" for s, r, t in edges))
    n = node_types[target]
    (path / "features.csv").write_text("".join(",".join(["0.5"] * D) + "\n" for _ in range(n)))
    (path / "labels.tsv").write_text("".join(f"{i}\t{i % num_classes}\n" for i in range(n)))


def test_acm_style_manifest_counts(tmp_path):
    rels = [("PA", "P", "A"), ("AP", "A", "P"), ("PS", "P", "S"), ("SP", "S", "P")]
    edges = [(0, "PA", 7166), (7166, "AP", 0), (4018, "PS", 59), (59, "SP", 4018)]
    write_manifest_dir(tmp_path, {"P": 4019, "A": 7167, "S": 60}, rels, {"PAP": ["PA", "AP"], "PSP": ["PS", "SP"]}, 3, "P", edges)
    g = load_dataset(tmp_path)
    assert g.node_types == {"P": 4019, "A": 7167, "S": 60}
    assert [p.name for p in g.meta_paths] == ["PAP", "PSP"]
    assert g.num_classes == 3 and g.raw_features.shape == (4019, 2)


def test_dblp_style_manifest_counts(tmp_path):
    rels = [("AP", "A", "P"), ("PA", "P", "A"), ("PC", "P", "C"), ("CP", "C", "P"), ("PT", "P", "T"), ("TP", "T", "P")]
    mps = {"APA": ["AP", "PA"], "APCPA": ["AP", "PC", "CP", "PA"], "APTPA": ["AP", "PT", "TP", "PA"]}
    write_manifest_dir(tmp_path, {"A": 8, "P": 6, "C": 2, "T": 5}, rels, mps, 4, "A", [(0, "AP", 1), (1, "PA", 0)])
    g = load_dataset(tmp_path)
    assert g.num_classes == 4
    assert len(g.meta_paths) == 3
    assert len(build_views(g)) == 3


def test_single_type_without_relations_rejected(tmp_path):
    write_manifest_dir(tmp_path, {"P": 3}, [], {}, 2, "P", [])
    with pytest.raises(ValidationError):
        load_dataset(tmp_path)


def test_missing_file_and_dangling_ids(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")
    rels = [("PA", "P", "A"), ("AP", "A", "P")]
    write_manifest_dir(tmp_path, {"P": 3, "A": 2}, rels, {"PAP": ["PA", "AP"]}, 2, "P", [(0, "PA", 1), (2, "PA", 5)])
    with pytest.raises(ValidationError, match="line 2"):
        load_dataset(tmp_path)


def test_save_load_round_trip(tmp_path):
    spec = SyntheticSpec(40, 2, feature_dim=5, meta_paths=[SyntheticMetaPath("PAP", "A", 0.2, 0.05), SyntheticMetaPath("PSP", "S", 0.1, 0.1)])
    g = generate_synthetic(spec, 3)
    back = load_dataset(save_dataset(g, tmp_path / "ds"))
    assert back.node_types == g.node_types and back.meta_paths == g.meta_paths and back.relations == g.relations
    assert back.raw_features.tobytes() == g.raw_features.tobytes()
    np.testing.assert_array_equal(back.labels, g.labels)
    for r in g.relations:
        np.testing.assert_array_equal(back.edges[r.name], g.edges[r.name])


# ---------------------------------------------------------------- synthetic generator


def test_generator_deterministic_and_validated():
    spec = SyntheticSpec(30, 3, meta_paths=[SyntheticMetaPath("PAP", "A", 0.3, 0.1)])
    a, b = generate_synthetic(spec, 9), generate_synthetic(spec, 9)
    assert a.raw_features.tobytes() == b.raw_features.tobytes()
    np.testing.assert_array_equal(a.edges["P-A"], b.edges["P-A"])
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticSpec(30, 3, meta_paths=[SyntheticMetaPath("PAP", "A", 1.2, 0.1)]), 0)


def test_generator_homophily_of_informative_view():
    spec = SyntheticSpec(200, 3, meta_paths=[SyntheticMetaPath("PAP", "A", 0.1, 0.005), SyntheticMetaPath("PSP", "S", 0.05, 0.05)])
    g = generate_synthetic(spec, 0)
    views = build_views(g)
    assert homophily(views[0], g.labels) > 0.8
    assert homophily(views[1], g.labels) < 0.5


def test_generator_no_signal_case():
    # separation 0 and equal probabilities: class-conditional feature means coincide in expectation
    spec = SyntheticSpec(3000, 3, feature_dim=4, separation=0.0, meta_paths=[SyntheticMetaPath("PAP", "A", 0.001, 0.001)])
    g = generate_synthetic(spec, 1)
    means = np.array([g.raw_features[g.labels == c].mean(axis=0) for c in range(3)])
    assert np.abs(means).max() < 4 / np.sqrt(1000)
    assert abs(homophily(build_views(g)[0], g.labels) - 1 / 3) < 0.1


# ---------------------------------------------------------------- pair sampling


def view_from(adj):
    return MetaPathView(MetaPath("X", ("a", "b")), np.asarray(adj, dtype=np.float64))


def test_two_node_view_positives():
    v = view_from([[1, 1, 0], [1, 1, 0], [0, 0, 1]])
    pos, neg = sample_pairs(v, 4, 0)
    assert {tuple(p) for p in pos} <= {(0, 1), (1, 0)}
    assert all(v.adjacency[a, b] == 0 and a != b for a, b in neg)


def test_sampling_errors():
    with pytest.raises(SamplingError):
        sample_pairs(view_from(np.ones((3, 3))), 4, 0)
    with pytest.raises(SamplingError):
        sample_pairs(view_from(np.eye(3)), 4, 0)
    with pytest.raises(ConfigError):
        sample_pairs(view_from([[1, 1, 0], [1, 1, 0], [0, 0, 1]]), 0, 0)


def test_sampling_deterministic():
    v = build_views(generate_synthetic(SyntheticSpec(30, 2, meta_paths=[SyntheticMetaPath("PAP", "A", 0.3, 0.1)]), 0))[0]
    a, b = sample_pairs(v, 50, 7), sample_pairs(v, 50, 7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def pair_uniformity(draws: int = 100_000):
    """Chi-square statistics of positive and negative pair frequencies against the uniform oracle."""
    adj = np.eye(6)
    for a, b in [(0, 1), (1, 2), (2, 3), (3, 0), (4, 5)]:
        adj[a, b] = adj[b, a] = 1
    pos, neg = sample_pairs(view_from(adj), draws, 11)
    out = []
    for pairs, allowed in ((pos, adj == 1), (neg, adj == 0)):
        ordered = [(a, b) for a, b in product(range(6), repeat=2) if a != b and allowed[a, b]]
        index = {p: i for i, p in enumerate(ordered)}
        counts = np.bincount([index[tuple(p)] for p in pairs], minlength=len(ordered))
        expected = draws / len(ordered)
        out.append((counts, expected))
    return out


def test_pair_frequencies_uniform_within_three_sigma():
    for counts, expected in pair_uniformity():
        k = counts.size
        sigma = np.sqrt(expected * (1 - 1 / k))
        assert np.all(np.abs(counts - expected) < 3 * sigma)
        assert stats.chisquare(counts).pvalue > 1e-3
        chi2 = np.sum((counts - expected) ** 2 / expected)
        assert abs(chi2 - (k - 1)) < 3 * np.sqrt(2 * (k - 1))
