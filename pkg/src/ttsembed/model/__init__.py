from .config import ModelConfig
from .network import TTSModel
from .losses import (JointLossBreakdown, anneal_lambda, loss_joint,
                     loss_speaker, loss_tts)
from .checkpoint import load_checkpoint, save_checkpoint
from .trainer import Example, load_train_state, save_train_state, train

__all__ = [
    "ModelConfig", "TTSModel", "JointLossBreakdown", "anneal_lambda",
    "loss_joint", "loss_speaker", "loss_tts", "load_checkpoint",
    "save_checkpoint", "Example", "load_train_state", "save_train_state",
    "train",
]
