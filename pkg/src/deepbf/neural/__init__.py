"""Universal deep beamformer: numpy CNN with hand-written gradients."""

from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .gradcheck import gradient_check
from .layers import batchnorm, batchnorm_backward, conv2d, conv2d_backward, loss_mse
from .network import ConvLayer, Network, NetworkConfig, ShapeError, forward, xavier_init
from .training import (
    Checkpoint,
    Sample,
    TrainConfig,
    TrainingDiverged,
    infer_frame,
    lr_schedule,
    make_sample,
    sgd_step,
    train,
    window_starts,
)
