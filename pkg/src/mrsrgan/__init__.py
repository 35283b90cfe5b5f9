"""Grayscale / anisotropic SRGAN toolkit for MR slice super-resolution."""

from .dataset import (
    DatasetSplit,
    Provenance,
    SliceImage,
    Volume,
    crop_or_pad,
    extract_inplane_slices,
    extract_throughplane_slices,
    load_volume,
    normalize_intensity,
    save_volume,
    split_patients,
)
from .degradation import DegradationSpec, bicubic_upsample, downsample, make_pair
from .losses import LossWeights, adversarial_loss_g, content_loss, discriminator_loss, perceptual_loss, pixel_mse
from .metrics import IDENTICAL, MetricParams, MetricsReport, evaluate_methods, psnr, ssim
from .model import (
    DiscriminatorConfig,
    GeneratorConfig,
    UpscaleStage,
    build_discriminator,
    build_generator,
    pixel_shuffle_aniso,
)
from .training import TrainConfig, adversarial_train, load_checkpoint, pretrain_generator, save_checkpoint
from .volume_sr import VolumeSRPlan, fuse_volumes, run_experiment3, superresolve_stack

__version__ = "0.1.0"
