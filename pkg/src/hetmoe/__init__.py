"""Cross-domain heterogeneous graph prompt learning with a frozen, structure-routed expert pool."""

from .diffcore import Tape, Value, backward
from .experiment import ExperimentConfig, run_ablations, run_cross_domain, sweep
from .experts import ExpertPool, RouterConfig, RouterState
from .hetgraph import HeteroGraph, MetaPath, MetaPathView, SyntheticMetaPath, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .pretrain import PretrainConfig, export_expert_pool, run_pretraining
from .prompttune import PromptSet, TuneConfig, finetune

__version__ = "0.1.0"
