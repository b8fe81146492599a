"""Set-abstraction embedding network, losses and training loops."""

from .losses import angular_margin_loss, triplet_loss_cosine
from .model import (
    FaceNetParams,
    NetworkConfig,
    PreparedCloud,
    SetAbstractionConfig,
    embed,
    forward,
    forward_batch,
    init_params,
    network_config,
    prepare_cloud,
    set_abstraction,
)
from .training import (
    FineTuneConfig,
    TrainConfig,
    TrainingDiverged,
    fine_tune_triplets,
    train_classifier,
)
