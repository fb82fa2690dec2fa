"""Desk-scale diffusion models for synthetic pathology patches.

Pixel-space and latent diffusion with DDPM, DDIM and epsilon-scaling
samplers, classifier-free guidance, FID/KID metrics and a synthetic
whole-slide data generator. Compiled kernels use numba unless
``DIFPATH_NUMBA=0`` is set before import.
"""
from ._accel import backend
from .classifier import ClassifierParams, SmallCNN, run_triplet, train_classifier
from .config import ExperimentConfig, load_config
from .data import (Checkpoint, PatchSpec, extract_patches, fov_of, generate_slide, load_checkpoint,
                   load_ppm, pixel_extent_of, save_checkpoint, save_ppm)
from .denoiser import AnalyticGMMDenoiser, ConvDenoiser
from .diffusion import forward_marginal, simple_loss
from .errors import DifpathError
from .latent import Autoencoder, ldm_pipeline
from .metrics import fid, fid_from_features, kid, sliced_wasserstein
from .numerics import RngStream, psd_sqrt, sym_eig
from .samplers import SamplerConfig, sample
from .schedule import NoiseSchedule, linear_schedule, make_schedule

__version__ = "0.1.0"

__all__ = [
    "AnalyticGMMDenoiser", "Autoencoder", "Checkpoint", "ClassifierParams", "ConvDenoiser",
    "DifpathError", "ExperimentConfig", "NoiseSchedule", "PatchSpec", "RngStream",
    "SamplerConfig", "SmallCNN", "backend", "extract_patches", "fid", "fid_from_features",
    "forward_marginal", "fov_of", "generate_slide", "kid", "ldm_pipeline", "linear_schedule",
    "load_checkpoint", "load_config", "load_ppm", "make_schedule", "pixel_extent_of",
    "psd_sqrt", "run_triplet", "sample", "save_checkpoint", "save_ppm", "simple_loss",
    "sliced_wasserstein", "sym_eig", "train_classifier",
]
