"""Desk-scale contrastive image-text training and retrieval evaluation."""

from .ablation import AblationRow, Axis, ablation_sweep, write_ablation_csv
from .features import read_features, write_features
from .loss import ContrastiveLoss, contrastive_loss
from .retrieval import Direction, RetrievalReport, ground_truth_ranks, report_from_similarity
from .synthetic import PairCorpus, SyntheticCorpus, SyntheticCorpusConfig, make_corpus
from .train import EncoderParams, TrainConfig, TrainResult, ViewPolicy, eval_retrieval, train

__all__ = [
    "AblationRow", "Axis", "ContrastiveLoss", "Direction", "EncoderParams", "PairCorpus",
    "RetrievalReport", "SyntheticCorpus", "SyntheticCorpusConfig", "TrainConfig", "TrainResult",
    "ViewPolicy", "ablation_sweep", "contrastive_loss", "eval_retrieval", "ground_truth_ranks",
    "make_corpus", "read_features", "report_from_similarity", "train", "write_ablation_csv",
    "write_features",
]
