"""Influence-guided pseudo-label selection with a graph judge for text-attributed graphs."""

from .graph import Graph, LabelSpace, Split, TextCorpus, load_graph, make_few_shot_split
from .influence import InfluenceSelector, brute_force_influence, influence_scores, select_top_k, \
    shortest_path_profile
from .judge import FeaturePropagator, SGCJudge, propagate, train_judge
from .labeling import (MISSING, UNPARSED, PartitionResult, PredictionSet, agreement_accuracy_bound, build_report,
                       co_label, error_correlation, filter_disagreement, partition, preference_score)
from .objectives import (LossConfig, combined_loss, instruction_loss, odds, orpo_preference_function,
                         preference_loss, preference_loss_grad)
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .simulation import SimConfig, bound_violation_scan, simulate, tau_sweep
from .text_model import WeaklySupervisedTextClassifier, featurize, grad_check, train_weakly_supervised

__all__ = [
    "Graph", "LabelSpace", "Split", "TextCorpus", "load_graph", "make_few_shot_split", "InfluenceSelector",
    "brute_force_influence", "influence_scores", "select_top_k", "shortest_path_profile", "FeaturePropagator",
    "SGCJudge", "propagate", "train_judge", "MISSING", "UNPARSED", "PartitionResult", "PredictionSet",
    "agreement_accuracy_bound", "build_report", "co_label", "error_correlation", "filter_disagreement", "partition",
    "preference_score", "LossConfig", "combined_loss", "instruction_loss", "odds", "orpo_preference_function",
    "preference_loss", "preference_loss_grad", "PipelineConfig", "PipelineError", "run_pipeline", "SimConfig",
    "bound_violation_scan", "simulate", "tau_sweep", "WeaklySupervisedTextClassifier", "featurize", "grad_check",
    "train_weakly_supervised",
]

__version__ = "0.1.0"
