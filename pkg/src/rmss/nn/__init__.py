"""Numpy point encoder, losses, optimizers and augmentations."""

from .augment import augment
from .losses import TverskyParams, focal_tversky_loss
from .model import (EncoderConfig, Network, batch_pooling, encoder_backward, encoder_forward,
                    encoder_layout, head_backward, head_forward, head_layout, init_encoder,
                    init_head, knn_indices, pooling_matrix, softmax_probs)
from .optim import ModelState, adamw_step, ema_update, multistep_lr, sgdw_step

__all__ = ["augment", "TverskyParams", "focal_tversky_loss", "EncoderConfig", "Network",
           "batch_pooling", "encoder_backward", "encoder_forward", "encoder_layout",
           "head_backward", "head_forward", "head_layout", "init_encoder", "init_head",
           "knn_indices", "pooling_matrix", "softmax_probs", "ModelState", "adamw_step",
           "ema_update", "multistep_lr", "sgdw_step"]
