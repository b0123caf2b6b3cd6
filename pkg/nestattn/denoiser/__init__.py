"""
Toy diffusion host model, subject adapters, training, sampling and checkpoints
"""

from .adapter import FACTOR_MECHANISMS, PersonalizedSubject, SubjectAdapter, build_encoder, knob_arguments
from .checkpoint import (
    Checkpoint,
    ModelBundle,
    build_adapter,
    build_host,
    bundle_tensors,
    check_host_compatible,
    load_bundle,
    load_checkpoint,
    save_checkpoint,
)
from .model import CaptureHandle, DenoiserBlock, SelfAttention, ToyDenoiser, denoiser_forward, timestep_embedding
from .pipeline import bind_reference, train_adapter, train_host
from .prompt import PromptEmbedding, retarget_subject
from .sampling import initial_latent, sample
from .schedule import DiffusionSchedule, forward_noising
from .training import Trainer, TrainingResult, sample_loss, training_step

__all__ = [
    "FACTOR_MECHANISMS",
    "PersonalizedSubject",
    "SubjectAdapter",
    "build_encoder",
    "knob_arguments",
    "Checkpoint",
    "ModelBundle",
    "build_adapter",
    "build_host",
    "bundle_tensors",
    "check_host_compatible",
    "load_bundle",
    "load_checkpoint",
    "save_checkpoint",
    "bind_reference",
    "train_adapter",
    "train_host",
    "CaptureHandle",
    "DenoiserBlock",
    "SelfAttention",
    "ToyDenoiser",
    "denoiser_forward",
    "timestep_embedding",
    "PromptEmbedding",
    "retarget_subject",
    "initial_latent",
    "sample",
    "DiffusionSchedule",
    "forward_noising",
    "Trainer",
    "TrainingResult",
    "sample_loss",
    "training_step",
]
