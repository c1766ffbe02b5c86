"""Parallel-dilated CNN engine: layers, model, training, saliency and evaluation."""

from .augment import AugmentSpec, augment
from .explain import Heatmap, SaliencyInputs, grad_cam, grad_cam_pp, upsample_overlay
from .layers import ConvSpec, GradTape, LayerParams, output_extent, receptive_field
from .metrics import class_metrics, confusion, roc_auc, wald_ci, weighted_average
from .model import CLASS_NAMES, ModelConfig, ModelGraph, build_pdcovidnet
from .train import TrainConfig, adam_step, cross_entropy, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "AugmentSpec", "augment", "Heatmap", "SaliencyInputs", "grad_cam", "grad_cam_pp", "upsample_overlay",
    "ConvSpec", "GradTape", "LayerParams", "output_extent", "receptive_field", "class_metrics", "confusion",
    "roc_auc", "wald_ci", "weighted_average", "CLASS_NAMES", "ModelConfig", "ModelGraph", "build_pdcovidnet",
    "TrainConfig", "adam_step", "cross_entropy", "split_dataset", "train",
]
