"""Fundus-to-heightmap translation: predict a color-encoded macular
heightmap (0..500 um) from a color fundus photograph.

The pipeline is adversarial image-to-image translation with a stacked
U-Net generator under deep supervision, a feature-tapped discriminator
whose activations double as a perceptual metric, and a reversible
color/height codec at the boundaries. Everything runs deterministically
on CPU at desk scale; see the README for the command-line walkthrough.
"""

__version__ = "0.1.0"

from .codec import ColorMap, HeightField, decode_height, encode_height
from .config import RunConfig, desk_config, full_config, load_config, preset
from .data import FundusImage, SamplePair, augment_flips, make_splits, synth_generate
from .discriminator import DiscriminatorConfig, build_discriminator, d_forward
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    DomainError,
    FundusHeightError,
    HeightRangeError,
    ShapeError,
    TrainingDivergenceError,
)
from .generator import GeneratorConfig, aggregate_heads, build_generator, grow_stack
from .losses import (
    LossBreakdown,
    LossWeights,
    discriminator_total,
    generator_total,
    lsgan_d_loss,
    lsgan_g_loss,
    perceptual_loss,
    pixel_loss,
)
from .metrics import MetricReport, evaluate, lpips, mse, psnr, ssim
from .preprocess import clahe, normalize, resize
from .trainer import TrainConfig, fit_progressive, lr_at, resume, train_step

__all__ = [
    "__version__",
    "ColorMap",
    "HeightField",
    "decode_height",
    "encode_height",
    "RunConfig",
    "desk_config",
    "full_config",
    "load_config",
    "preset",
    "FundusImage",
    "SamplePair",
    "augment_flips",
    "make_splits",
    "synth_generate",
    "DiscriminatorConfig",
    "build_discriminator",
    "d_forward",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "DomainError",
    "FundusHeightError",
    "HeightRangeError",
    "ShapeError",
    "TrainingDivergenceError",
    "GeneratorConfig",
    "aggregate_heads",
    "build_generator",
    "grow_stack",
    "LossBreakdown",
    "LossWeights",
    "discriminator_total",
    "generator_total",
    "lsgan_d_loss",
    "lsgan_g_loss",
    "perceptual_loss",
    "pixel_loss",
    "MetricReport",
    "evaluate",
    "lpips",
    "mse",
    "psnr",
    "ssim",
    "clahe",
    "normalize",
    "resize",
    "TrainConfig",
    "fit_progressive",
    "lr_at",
    "resume",
    "train_step",
]
