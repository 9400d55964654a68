"""Desk-scale sequence-to-sequence transformer (numpy, exact gradients)."""
from .gradcheck import gradient_check, toy_problem
from .model import Model, ModelConfig, cross_entropy, decoder_io, param_count
from .train import (Adam, TrainConfig, greedy_decode, load_checkpoint, lr_schedule,
                    model_config_for, save_checkpoint, train, train_step)

__all__ = [
    "Model", "ModelConfig", "TrainConfig", "Adam", "cross_entropy", "decoder_io", "param_count",
    "greedy_decode", "load_checkpoint", "lr_schedule", "model_config_for", "save_checkpoint",
    "train", "train_step", "gradient_check", "toy_problem",
]
