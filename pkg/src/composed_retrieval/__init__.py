"""Composed image+text retrieval with joint global-local similarity alignment.

Fuse a query image's multi-level features with text token embeddings, score
database images with a weighted global-local similarity, rank them, train
the fusion and alignment parameters contrastively, and evaluate with mAP
and Accuracy@K.
"""

__version__ = "0.1.0"

from .alignment import (
    FusionWeight,
    RegionMaskGenerator,
    fuse,
    global_similarity,
    local_similarity,
    region_descriptors,
    region_masks,
)
from .autodiff import (
    Tensor,
    cosine_similarity,
    gradient_check,
    mean_pool,
    no_grad,
    scaled_dot_attention,
)
from .bundle import FeatureBundle, load_bundle, load_checkpoint, save_bundle, save_checkpoint
from .composer import CrossModalBlock, compose, compose_all
from .experiment import ExperimentConfig, evaluate_model, run_experiment
from .features import LEVELS
from .metrics import (
    RelevanceVector,
    acc_at_k,
    accuracy_at_k,
    average_precision,
    mean_ap,
    precision_at,
)
from .model import ModelConfig, RetrievalModel
from .retrieval import (
    DatabaseEntry,
    QueryRecord,
    RankedList,
    label_positives,
    rank,
    score,
    top_k,
)
from .synthetic import generate_local_cue_bundle, generate_synthetic
from .trainer import (
    AdamOptimizer,
    FoldSplit,
    TrainConfig,
    contrastive_loss,
    stratified_kfold,
    train_fold,
)
