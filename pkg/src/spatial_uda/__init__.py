"""Unsupervised domain adaptation for classifying multi-type spatial point maps.

A labelled source place-type and an unlabelled target place-type share a
category vocabulary. Spatial mix-up, mask mixing and spatial contrastive
predictive coding give the encoder self-supervised signal on the target.
"""

from .data import PlaceTypeDataset, PointMap, SplitSpec, farthest_point_sample, load_dataset, save_dataset, split_dataset, subset_expand
from .encoder import EncoderConfig, SpatialDAModel, classify, encode, load_checkpoint, predict, save_checkpoint
from .evaluation import (
    MetricReport,
    adaptation_table,
    colocation_features,
    fit_surrogate,
    permutation_importance,
    weighted_metrics,
)
from .mixmask import MixConfig, loss_cls_maskmix, loss_cls_mix, loss_cls_softmix, spatial_mask_mix, spatial_mixup
from .scpc import LatentBatch, PairingPlan, scpc_loss
from .synthetic import ArrangementRule, GenConfig, RuleKind, generate_place_type, generate_shifted_pair
from .trainer import RunReport, TrainConfig, UnsupervisedContractError, train, train_supervised_target

__version__ = "0.1.0"
