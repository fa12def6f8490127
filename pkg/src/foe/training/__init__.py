"""Losses, Adam, plane sharding and the training loops."""

from .adam import Adam, AdamSlot, adam_step
from .loop import MODES, TrainConfig, TrainResult, estimate_input_scale, smoothed, train
from .loss import LossConfig, high_pass, loss, loss_terms, normalizers
from .sharding import (ReconTerms, ReplicaStore, ShardPlan, WorkerPool, recon_chunks, round_robin,
                       select_planes, sharded_image, sharded_psf_image, sharded_reconstruct_loss)

__all__ = [
    "Adam", "AdamSlot", "adam_step", "MODES", "TrainConfig", "TrainResult", "smoothed", "train", "estimate_input_scale",
    "LossConfig", "high_pass", "loss", "loss_terms", "normalizers", "ReconTerms", "ReplicaStore",
    "ShardPlan", "WorkerPool", "recon_chunks", "round_robin", "select_planes", "sharded_image",
    "sharded_psf_image", "sharded_reconstruct_loss",
]
