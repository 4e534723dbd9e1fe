"""Omni-loss conditional GAN objectives, an INR image head and a toy-scale
training harness, in numpy."""

__version__ = "0.1.0"

from .estimator import ConditionalGAN
from .exceptions import (
    InputError,
    NonFiniteError,
    OmniLossError,
    ParameterError,
    ShapeError,
    StaleCacheError,
)
from .inr import INRGenerator, INRHead, bilinear_sample, make_coord_grid, synthesize, unfold3x3
from .inversion import Degradation, InversionConfig, degrade, feature_distance, invert, psnr
from .labels import LabelScheme, Role, build_oneside_target, build_omni_target
from .losses import (
    hinge_gan_loss,
    multi_hinge_loss,
    omni_from_unified_identity,
    omni_loss,
    perpixel_omni_loss,
    softmax_ce_loss,
    unified_loss,
)
from .nn import Discriminator, Generator
from .optim import DECAY_PRESETS, Adam, grad_check, truncated_sample
from .toydata import make_gaussian_ring, make_pattern_images, mode_coverage
from .trainer import TrainConfig, detect_collapse, train

__all__ = [
    "__version__",
    "Adam",
    "ConditionalGAN",
    "DECAY_PRESETS",
    "Degradation",
    "Discriminator",
    "Generator",
    "INRGenerator",
    "INRHead",
    "InputError",
    "InversionConfig",
    "LabelScheme",
    "NonFiniteError",
    "OmniLossError",
    "ParameterError",
    "Role",
    "ShapeError",
    "StaleCacheError",
    "TrainConfig",
    "bilinear_sample",
    "build_omni_target",
    "build_oneside_target",
    "degrade",
    "detect_collapse",
    "feature_distance",
    "grad_check",
    "hinge_gan_loss",
    "invert",
    "make_coord_grid",
    "make_gaussian_ring",
    "make_pattern_images",
    "mode_coverage",
    "multi_hinge_loss",
    "omni_from_unified_identity",
    "omni_loss",
    "perpixel_omni_loss",
    "psnr",
    "softmax_ce_loss",
    "synthesize",
    "train",
    "truncated_sample",
    "unfold3x3",
    "unified_loss",
]
