"""Dual-loss residual sequential recommender in plain numpy."""

from .model import (
    Architecture,
    Batch,
    LossConfig,
    activation_pattern,
    disc_term,
    forward,
    gen_term,
    init_params,
    loss_and_grads,
)
from .train import (
    DLR2Model,
    DLR2Recommender,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    load_model,
    rank_items,
    save_model,
    train,
    training_examples,
    validation_hr10,
)
