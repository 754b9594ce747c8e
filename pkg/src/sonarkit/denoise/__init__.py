"""Self-supervised denoising from noisy frames only."""

from .checkpoint import load_model, save_history, save_model
from .estimator import SelfSupervisedDenoiser
from .loss import LossTerms, batch_loss, compute_loss
from .network import DenoiserModel, count_parameters
from .subsample import SubsamplePair, apply_subsample, neighbor_subsample, random_choice_map
from .train import EpochLoss, TrainConfig, denoise_frame, denoise_image, train

__all__ = [
    "DenoiserModel", "EpochLoss", "LossTerms", "SelfSupervisedDenoiser", "SubsamplePair",
    "TrainConfig", "apply_subsample", "batch_loss", "compute_loss", "count_parameters",
    "denoise_frame", "denoise_image", "load_model", "neighbor_subsample", "random_choice_map",
    "save_history", "save_model", "train",
]
