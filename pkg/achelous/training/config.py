from typing import Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.config import TASK_NAMES


class TrainConfig(BaseModel):
    """Optimization recipe; defaults follow the reference training protocol."""

    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(100, gt=0)
    batch_size: int = Field(32, gt=0)
    lr0: float = Field(0.03, gt=0)
    lr_min: Optional[float] = Field(None, ge=0, description="Final learning rate; lr0 / 100 when unset")
    momentum: float = Field(0.937, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    warmup_epochs: int = Field(3, ge=0)
    ema_decay: float = Field(0.9998, ge=0, lt=1)
    ema_tau: float = Field(2000.0, gt=0)
    box_weight: float = Field(5.0, ge=0)
    focal_alpha: float = Field(0.25, gt=0, lt=1)
    focal_gamma: float = Field(2.0, ge=0)
    dice_eps: float = Field(1.0, gt=0)
    image_size: int = Field(320, gt=0)
    seed: int = 0
    checkpoint_every: int = Field(10, gt=0)
    tasks: Tuple[str, ...] = TASK_NAMES
    zero_rvp: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.lr_min is None:
            self.lr_min = self.lr0 / 100
        if self.lr_min > self.lr0:
            raise ValueError(f"lr_min {self.lr_min} exceeds lr0 {self.lr0}")
        unknown = [t for t in self.tasks if t not in TASK_NAMES]
        if unknown or not self.tasks:
            raise ValueError(f"tasks must be a non-empty subset of {TASK_NAMES}, got {self.tasks}")
        return self
