"""Histogram-approximated mAP optimization with metric learning and exact re-ID evaluation."""
from .core import (LabeledSet, Role, SimilarityMatrix, batch_similarity, cosine_similarity,
                   euclidean_distance_matrix, l2_normalize)
from .evaluation import EvalResult, evaluate, exact_ap, ranking_list
from .histmap import (BinGrid, HistogramApState, chain_to_embeddings, map_loss_backward,
                      map_loss_forward, soft_histograms, soft_map, triangular_kernel)
from .losses import ClassifierHead, LossReport, batch_hard_triplet_loss, combine_losses, cross_entropy_loss
from .model import EmbeddingModel, SgdOptimizer, normalize_with_backward, sgd_step
from .training import TrainConfig, train

__version__ = "0.1.0"
