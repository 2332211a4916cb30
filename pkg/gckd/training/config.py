"""Training hyperparameters and ablation modes."""
from dataclasses import dataclass

from gckd.errors import ConfigError

MODES = ("baseline", "cmkd", "cmkd_gmp")


@dataclass
class TrainConfig:
    """Optimizer and schedule settings for warm-up and adaptation."""

    batch_size: int = 4  # target images/texts per adaptation step
    lr: float = 1e-5  # adaptation AdamW peak learning rate (cosine decay)
    weight_decay: float = 0.01  # decoupled
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 1  # adaptation epochs, counted over the target set
    warmup_epochs: int = 10  # supervised contrastive epochs on source pairs
    warmup_lr: float = 5e-3
    warmup_batch_size: int = 32
    momentum: float = 0.999  # EMA coefficient alpha
    clip_norm: float = 0.0  # 0 disables gradient clipping
    seed: int = 0

    def validate(self) -> None:
        if not self.lr > 0 or not self.warmup_lr > 0:
            raise ConfigError("train.lr and train.warmup_lr must be positive")
        if self.batch_size < 1 or self.warmup_batch_size < 1:
            raise ConfigError("train batch sizes must be >= 1")
        if self.epochs < 0 or self.warmup_epochs < 0:
            raise ConfigError("train epoch counts must be >= 0")
        if not 0.0 <= self.momentum <= 1.0:
            raise ConfigError(f"train.momentum must lie in [0, 1], got {self.momentum}")
        if self.weight_decay < 0 or self.clip_norm < 0:
            raise ConfigError("train.weight_decay and train.clip_norm must be >= 0")
