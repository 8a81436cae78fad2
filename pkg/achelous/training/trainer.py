"""Five-task training: loss assembly, one optimization step, and the epoch loop with logs and checkpoints."""
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from achelous.autograd.checkpoint import save_checkpoint
from achelous.autograd.nn import Module, manual_seed
from achelous.autograd.tensor import Tensor, no_grad
from achelous.data.dataset import Batch, collate
from achelous.data.synth import Sample
from achelous.evaluation.visualize import plot_loss_curves
from achelous.models.achelous_net import AchelousNet, AchelousOutput
from achelous.training.config import TrainConfig
from achelous.training.losses import (
    LOSS_TASKS,
    LogVariances,
    TaskLosses,
    detection_loss,
    dice_loss,
    nll_loss,
    one_hot,
    total_loss,
)
from achelous.training.optim import SGD, ModelEMA, cosine_lr
from core.config import TASK_NAMES, RunConfig
from core.errors import TrainingDivergedError

logger = logging.getLogger(__name__)

LOG_COLUMNS = (
    ("step", "lr") + tuple(LOSS_TASKS) + tuple(f"s_{task}" for task in TASK_NAMES) + ("total",)
)


def compute_losses(output: AchelousOutput, batch: Batch, cfg: TrainConfig) -> Tuple[Dict[str, Tensor], Dict[str, Tensor]]:
    """Returns (per-task losses keyed by det/seg_td/seg_wl/pc, individual loss terms keyed as in TaskLosses)."""
    tasks: Dict[str, Tensor] = {}
    terms: Dict[str, Tensor] = {}
    if "det" in cfg.tasks:
        det, _ = detection_loss(output.det, batch.boxes, batch.classes, cfg.focal_alpha, cfg.focal_gamma)
        terms.update(det)
        tasks["det"] = det["det_cls"] + det["det_obj"] + det["det_box"] * cfg.box_weight
    if "seg_td" in cfg.tasks:
        logits = output.seg_targets
        terms["seg_targets"] = dice_loss(logits.softmax(axis=1), one_hot(batch.seg, logits.shape[1]), cfg.dice_eps)
        tasks["seg_td"] = terms["seg_targets"]
    if "seg_wl" in cfg.tasks:
        logits = output.seg_waterline
        terms["seg_waterline"] = dice_loss(logits.softmax(axis=1), one_hot(batch.waterline, logits.shape[1]), cfg.dice_eps)
        tasks["seg_wl"] = terms["seg_waterline"]
    if "pc" in cfg.tasks:
        terms["pc_seg"] = nll_loss(output.pc.log_softmax(axis=2), batch.point_labels, batch.point_mask)
        tasks["pc"] = terms["pc_seg"]
    return tasks, terms


def forward_batch(model: AchelousNet, batch: Batch) -> AchelousOutput:
    return model(batch.image, batch.rvp, batch.points, batch.point_mask)


def summarize(terms: Dict[str, Tensor]) -> TaskLosses:
    return TaskLosses(**{name: float(value.item()) for name, value in terms.items()})


@dataclass
class StepResult:
    step: int
    lr: float
    losses: TaskLosses
    log_vars: Dict[str, float]
    total: float
    grad_norm: float

    def row(self) -> Dict[str, float]:
        row = {"step": self.step, "lr": self.lr, **self.losses.model_dump(), "total": self.total}
        row.update({f"s_{task}": self.log_vars.get(task, 0.0) for task in TASK_NAMES})
        return row


def train_step(
    model: AchelousNet,
    batch: Batch,
    optimizer: SGD,
    log_vars: LogVariances,
    cfg: TrainConfig,
    lr: float,
    step: int = 0,
    ema: Optional[ModelEMA] = None,
) -> StepResult:
    """Forward, SimOTA, losses, uncertainty-weighted total, backward, SGD and EMA update."""
    model.train()
    optimizer.zero_grad()
    tasks, terms = compute_losses(forward_batch(model, batch), batch, cfg)
    for task, loss in tasks.items():
        value = float(loss.item())
        if not math.isfinite(value):
            raise TrainingDivergedError(task, value, step)
    total = total_loss(tasks, log_vars)
    total.backward()

    grad_norm = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum())
                              for p in optimizer.params.values() if p.grad is not None))
    if not math.isfinite(grad_norm):
        raise TrainingDivergedError("+".join(tasks), grad_norm, step)
    optimizer.step(lr)
    if ema is not None:
        ema.update(model)
    return StepResult(step, lr, summarize(terms), log_vars.values(), float(total.item()), grad_norm)


def evaluate_losses(model: AchelousNet, samples: Sequence[Sample], cfg: TrainConfig) -> float:
    """Mean unweighted sum of task losses in eval mode."""
    model.eval()
    totals = []
    with no_grad():
        for start in range(0, len(samples), cfg.batch_size):
            batch = collate(samples[start:start + cfg.batch_size], zero_rvp=cfg.zero_rvp)
            tasks, _ = compute_losses(forward_batch(model, batch), batch, cfg)
            totals.append(sum(float(loss.item()) for loss in tasks.values()))
    model.train()
    return float(np.mean(totals)) if totals else float("nan")


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    figure: Optional[Path]
    history: List[StepResult] = field(default_factory=list)
    train_curve: List[float] = field(default_factory=list)
    val_curve: List[float] = field(default_factory=list)


class Trainer:
    """Epoch loop over in-memory samples; writes a per-step CSV, periodic checkpoints and a loss-curve figure."""

    def __init__(self, model: AchelousNet, cfg: TrainConfig, out_dir, config_text: str = ""):
        self.model = model
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.config_text = config_text
        self.log_vars = LogVariances(cfg.tasks)
        params = list(model.named_parameters()) + list(self.log_vars.named_parameters("loss"))
        self.optimizer = SGD(params, cfg.lr0, cfg.momentum, cfg.weight_decay)
        self.ema = ModelEMA(model, cfg.ema_decay, cfg.ema_tau)

    def _save(self, name: str) -> Path:
        folder = self.out_dir / "checkpoints"
        folder.mkdir(parents=True, exist_ok=True)
        save_checkpoint(folder / f"{name}.achl", self.model.state_dict(), self.config_text)
        path = folder / f"{name}_ema.achl"
        save_checkpoint(path, self.ema.state, self.config_text)
        return path

    def fit(self, samples: Sequence[Sample], val_samples: Optional[Sequence[Sample]] = None) -> TrainResult:
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
        total_steps = cfg.epochs * steps_per_epoch
        warmup = min(cfg.warmup_epochs * steps_per_epoch, total_steps)
        log_path = self.out_dir / "train_log.csv"
        result = TrainResult(checkpoint=self.out_dir, log_path=log_path, figure=None)

        logger.info(f"Training {self.model.tag} on {len(samples)} samples: {cfg.epochs} epochs, "
                    f"{total_steps} steps, tasks={','.join(cfg.tasks)}")
        step = 0
        with open(log_path, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=LOG_COLUMNS)
            writer.writeheader()
            for epoch in range(1, cfg.epochs + 1):
                order = np.random.default_rng(cfg.seed + epoch).permutation(len(samples))
                epoch_totals = []
                for start in range(0, len(order), cfg.batch_size):
                    batch = collate([samples[i] for i in order[start:start + cfg.batch_size]], zero_rvp=cfg.zero_rvp)
                    lr = cosine_lr(step + 1, total_steps, cfg.lr0, cfg.lr_min, warmup)
                    outcome = train_step(self.model, batch, self.optimizer, self.log_vars, cfg, lr, step, self.ema)
                    step += 1
                    writer.writerow(outcome.row())
                    result.history.append(outcome)
                    epoch_totals.append(sum(outcome.losses.model_dump().values()))
                    logger.info(f"epoch {epoch} step {step}/{total_steps} lr={lr:.5f} "
                                f"total={outcome.total:.4f} grad_norm={outcome.grad_norm:.3f}")
                result.train_curve.append(float(np.mean(epoch_totals)))
                if val_samples:
                    result.val_curve.append(evaluate_losses(self.model, val_samples, cfg))
                if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
                    result.checkpoint = self._save(f"epoch_{epoch:04d}")
                    logger.info(f"Saved checkpoint {result.checkpoint}")

        result.figure = plot_loss_curves(result.train_curve, result.val_curve, self.out_dir / "loss_curve.svg")
        return result


def build_model(run: RunConfig) -> AchelousNet:
    manual_seed(run.seed)
    return AchelousNet(run.to_model_config(), run.tasks)


def run_training(run: RunConfig, samples: Sequence[Sample], val_samples: Optional[Sequence[Sample]] = None,
                 model: Optional[Module] = None) -> TrainResult:
    """Build the configured network and train it on ``samples``."""
    model = model or build_model(run)
    trainer = Trainer(model, run.to_train_config(), run.out_dir, config_text=run.to_text())
    return trainer.fit(samples, val_samples)
