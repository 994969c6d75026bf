"""Fixed synthetic scenarios used by the acceptance suite and the demos.

All graphs come from :func:`generate_synthetic`; the numbers below were chosen
once and then frozen.
"""

from __future__ import annotations

from dataclasses import replace

from .experiment import ExperimentConfig
from .hetgraph import HeteroGraph, SyntheticMetaPath, SyntheticSpec, generate_synthetic
from .pretrain import PretrainConfig

# source domain: one block-structured view, one uniform-noise view
SOURCE_SPEC = SyntheticSpec(
    num_nodes=300,
    num_classes=3,
    feature_dim=32,
    separation=3.0,
    noise=0.5,
    center_seed=0,
    target_type="P",
    meta_paths=[SyntheticMetaPath("PAP", "A", 0.1, 0.005), SyntheticMetaPath("PSP", "S", 0.1, 0.1)],
)

# target domain: different raw width, rotated centers, shifted block probabilities
TARGET_SPEC = SyntheticSpec(
    num_nodes=300,
    num_classes=3,
    feature_dim=48,
    separation=2.0,
    noise=1.0,
    center_seed=7,
    target_type="M",
    meta_paths=[
        SyntheticMetaPath("MAM", "A", 0.06, 0.01),
        SyntheticMetaPath("MDM", "D", 0.04, 0.02),
        SyntheticMetaPath("MWM", "W", 0.05, 0.05),
    ],
)

SOURCE_SEED = 1
TARGET_SEED = 2


def cross_domain_pair() -> tuple[HeteroGraph, HeteroGraph]:
    return generate_synthetic(SOURCE_SPEC, SOURCE_SEED), generate_synthetic(TARGET_SPEC, TARGET_SEED)


def cross_domain_config(**pretrain_overrides) -> ExperimentConfig:
    """300 pre-training epochs, 5-shot tuning over seeds 0..4."""
    return ExperimentConfig(pretrain=replace(PretrainConfig(epochs=300), **pretrain_overrides), k=5, seeds=[0, 1, 2, 3, 4])


# structural selectivity: expert 0 learns the block view, expert 1 the noise view
SELECTIVITY_SOURCE = replace(SOURCE_SPEC, num_nodes=200)
SELECTIVITY_TARGET = SyntheticSpec(
    num_nodes=200,
    num_classes=3,
    feature_dim=48,
    separation=3.0,
    noise=0.5,
    center_seed=7,
    target_type="P",
    meta_paths=[SyntheticMetaPath("PAP", "A", 0.08, 0.01)],
)
SELECTIVITY_PRETRAIN = PretrainConfig(epochs=300, lr=5e-3, seed=0)


def selectivity_target(trial: int) -> HeteroGraph:
    return generate_synthetic(SELECTIVITY_TARGET, 100 + trial)


# smaller two-view source used for the pre-training descent check
PRETRAIN_SOURCE = replace(
    SOURCE_SPEC,
    num_nodes=200,
    meta_paths=[SyntheticMetaPath("PAP", "A", 0.1, 0.005), SyntheticMetaPath("PSP", "S", 0.03, 0.03)],
)
