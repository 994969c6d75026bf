import pytest

from hetmoe.experiment import ExperimentConfig, aligned_views, pretrain_pool
from hetmoe.hetgraph import SyntheticMetaPath, SyntheticSpec, generate_synthetic
from hetmoe.pretrain import PretrainConfig
from hetmoe.prompttune import TuneConfig

SMALL_SOURCE = SyntheticSpec(
    60, 3, feature_dim=12, separation=3.0, noise=0.5, meta_paths=[SyntheticMetaPath("PAP", "A", 0.3, 0.02), SyntheticMetaPath("PSP", "S", 0.1, 0.1)]
)
SMALL_TARGET = SyntheticSpec(
    60,
    3,
    feature_dim=10,
    separation=3.0,
    noise=0.5,
    center_seed=4,
    target_type="M",
    meta_paths=[SyntheticMetaPath("MAM", "A", 0.3, 0.02), SyntheticMetaPath("MDM", "D", 0.15, 0.05)],
)


@pytest.fixture(scope="session")
def small_config():
    return ExperimentConfig(
        pretrain=PretrainConfig(F=8, d=6, L=2, attn_dim=4, epochs=15, lr=5e-3),
        tune=TuneConfig(epochs=60, patience=10),
        k=2,
        seeds=[0, 1],
    )


@pytest.fixture(scope="session")
def small_graphs():
    return generate_synthetic(SMALL_SOURCE, 0), generate_synthetic(SMALL_TARGET, 1)


@pytest.fixture(scope="session")
def small_pool(small_graphs, small_config):
    pool, _ = pretrain_pool(small_graphs[0], small_config.pretrain)
    return pool


@pytest.fixture(scope="session")
def target_views(small_graphs, small_pool):
    return aligned_views(small_graphs[1], small_pool.in_dim)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
