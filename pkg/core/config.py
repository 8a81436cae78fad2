from pathlib import Path
from typing import Literal, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from core.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

TASK_NAMES = ("det", "seg_td", "seg_wl", "pc")


class Settings(BaseSettings):
    # Runtime settings
    LOG_LEVEL: str = Field("INFO", description="Level for console and file logging")
    LOG_FILE: Optional[str] = Field(None, description="Mirror log records into this file")
    DATA_ROOT: str = Field("data/synth", description="Default dataset root")
    OUT_DIR: str = Field("runs/latest", description="Default directory for checkpoints and reports")
    NUM_THREADS: int = Field(1, gt=0, description="BLAS/OpenMP thread cap applied while benchmarking")

    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", extra="ignore")


settings = Settings()


class RunConfig(BaseModel):
    """Flat run configuration read from a `key = value` text file."""

    model_config = ConfigDict(extra="forbid")

    size: Literal["s0", "s1", "s2"] = "s0"
    neck: Literal["gdf", "cdf"] = "gdf"
    fusion: Literal["fpn", "backbone_fpn"] = "fpn"
    radar_conv: Literal["radar_conv", "plain_conv"] = "radar_conv"
    pointnet: Literal["pn", "pn2"] = "pn"
    channels: Optional[Tuple[int, int, int, int]] = Field(None, description="Stage widths C2..C5; size default when unset")
    width: Optional[int] = Field(None, gt=0, description="FPN and head width; size default when unset")
    epochs: int = Field(100, gt=0)
    batch_size: int = Field(32, gt=0)
    lr0: float = Field(0.03, gt=0)
    lr_min_ratio: float = Field(0.01, gt=0, le=1)
    momentum: float = Field(0.937, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    warmup_epochs: int = Field(3, ge=0)
    ema_decay: float = Field(0.9998, ge=0, lt=1)
    ema_tau: float = Field(2000.0, gt=0)
    box_weight: float = Field(5.0, ge=0)
    image_size: int = Field(320, gt=0)
    seed: int = 0
    data_root: str = Field(default_factory=lambda: settings.DATA_ROOT)
    out_dir: str = Field(default_factory=lambda: settings.OUT_DIR)
    checkpoint_every: int = Field(10, gt=0)
    tasks: Tuple[str, ...] = TASK_NAMES
    zero_rvp: bool = False

    @field_validator("size", "neck", "fusion", "radar_conv", "pointnet", mode="before")
    @classmethod
    def _lower(cls, value):
        return value.strip().lower() if isinstance(value, str) else value

    @field_validator("channels", mode="before")
    @classmethod
    def _split_channels(cls, value):
        if isinstance(value, str):
            value = [int(part) for part in value.split(",") if part.strip()]
        return value

    @field_validator("image_size")
    @classmethod
    def _divisible(cls, value: int) -> int:
        if value % 32:
            raise ValueError(f"image_size must be divisible by 32, got {value}")
        return value

    @field_validator("tasks", mode="before")
    @classmethod
    def _split_tasks(cls, value):
        if isinstance(value, str):
            value = [part.strip() for part in value.split(",") if part.strip()]
        unknown = [task for task in value if task not in TASK_NAMES]
        if unknown:
            raise ValueError(f"unknown tasks {unknown}; expected a subset of {TASK_NAMES}")
        if not value:
            raise ValueError("at least one task must be enabled")
        return tuple(value)

    def to_model_config(self):
        from achelous.models.config import ModelConfig

        return ModelConfig.for_size(
            self.size,
            neck=self.neck,
            fusion=self.fusion,
            radar_conv=self.radar_conv,
            pointnet=self.pointnet,
            channels=self.channels,
            width=self.width,
        )

    def to_train_config(self):
        from achelous.training.config import TrainConfig

        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr0=self.lr0,
            lr_min=self.lr0 * self.lr_min_ratio,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            ema_decay=self.ema_decay,
            ema_tau=self.ema_tau,
            box_weight=self.box_weight,
            image_size=self.image_size,
            seed=self.seed,
            checkpoint_every=self.checkpoint_every,
            tasks=self.tasks,
            zero_rvp=self.zero_rvp,
        )

    def to_text(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def parse_key_values(text: str) -> dict:
    """Parse `key = value` / `key: value` lines, ignoring blanks and `#` comments."""
    values = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in ("=", ":"):
            if sep in line:
                key, value = line.split(sep, 1)
                break
        else:
            raise ConfigError(f"line {number}: expected 'key = value', got {raw!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {number}: duplicate key '{key}'")
        values[key] = value.strip()
    return values


def build_run_config(values: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"invalid run config: {problems}") from e


def load_run_config(path, **overrides) -> RunConfig:
    """Read a run config file; keyword overrides (e.g. from CLI flags) win over file values."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values = parse_key_values(path.read_text(encoding="utf-8"))
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_run_config(values)
