"""Flow-matching action-chunk policy."""

from .augment import augment
from .flow import (
    AugmentConfig, TrainConfig, cfm_loss, ema_update, euler_sample, grad_check, make_noisy,
    sample_timestep, wsd_lr,
)
from .model import VelocityModel
from .train import TrainResult, load_checkpoint, sample_chunk, save_checkpoint, train_bc
