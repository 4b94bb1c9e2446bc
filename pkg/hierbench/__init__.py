"""
hierbench: hierarchy-aware adversarial attacks, severity benchmarking and
coarse-to-fine adversarial training on label trees.
"""

__version__ = "0.3.0"

from .attacks import AttackKind, AttackSpec, pgd
from .bench import EvalRecord, SuiteReport, default_suite, evaluate_attack, run_suite
from .curriculum import FatConfig, TradesConfig, chat_train, make_schedule, train_model
from .hierarchy import Hierarchy, NodeRef, build, from_parent_map, load_tree
from .netcore import Classifier, make_classifier
from .synthdata import Dataset, SynthConfig, gen_data, gen_tree

__all__ = [
    "AttackKind",
    "AttackSpec",
    "Classifier",
    "Dataset",
    "EvalRecord",
    "FatConfig",
    "Hierarchy",
    "NodeRef",
    "SuiteReport",
    "SynthConfig",
    "TradesConfig",
    "build",
    "chat_train",
    "default_suite",
    "evaluate_attack",
    "from_parent_map",
    "gen_data",
    "gen_tree",
    "load_tree",
    "make_classifier",
    "make_schedule",
    "pgd",
    "run_suite",
    "train_model",
]
