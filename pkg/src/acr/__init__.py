"""Adaptive contrastive replay for class-incremental learning."""

from .buffer import ReplayBuffer, Sample, class_quota, coefficient_of_variation
from .confidence import ConfidenceLedger
from .data import Corruption, TaskStream, augment, corrupt, make_image_stream, make_synthetic_stream
from .estimator import ACRClassifier
from .evaluate import AccuracyMatrix, acc, bwt, eval_task, ood_accuracy_matrix
from .model import Encoder, ProxyClassifier, ce_loss, pcl_loss, sgd_step
from .runner import RunConfig, load_config, run_experiment

__all__ = [
    "ACRClassifier",
    "AccuracyMatrix",
    "ConfidenceLedger",
    "Corruption",
    "Encoder",
    "ProxyClassifier",
    "ReplayBuffer",
    "RunConfig",
    "Sample",
    "TaskStream",
    "acc",
    "augment",
    "bwt",
    "ce_loss",
    "class_quota",
    "coefficient_of_variation",
    "corrupt",
    "eval_task",
    "load_config",
    "make_image_stream",
    "make_synthetic_stream",
    "ood_accuracy_matrix",
    "pcl_loss",
    "run_experiment",
    "sgd_step",
]

__version__ = "0.1.0"
