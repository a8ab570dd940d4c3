"""Weakly semi-supervised binary segmentation from single-point annotations.

Point annotations are expanded into circular point-neighborhoods that
drive supervision (neighborhood L1 loss), pseudo-label quality scoring,
and two ambiguity-free mixup augmentations inside a mean-teacher loop.
"""

from .config import RunConfig, make_run_config
from .core import Image, MaskLabel, PointAnnotation, Sample, validate_sample
from .errors import ConfigError, DataError, DivergenceError
from .losses import LossWeights, loss_cs, loss_pn, loss_pxl, student_loss, teacher_loss
from .metrics import ConfusionCounts, MetricsReport, confusion, evaluate
from .model import ReferenceNet, SegmentationModel
from .neighborhood import (
    NeighborhoodBank, NeighborhoodMask, NeighborhoodSlice,
    build_bank, extract_slice, make_neighborhood_mask,
)
from .psm import PseudoLabel, psm_score, score_batch
from .synthdata import GenConfig, generate, simulate_point
from .trainer import TrainerState, ema_update, mine_pseudo_labels, run

__version__ = "0.1.0"
