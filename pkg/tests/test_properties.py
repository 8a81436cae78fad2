"""
Randomized oracles and end-to-end properties of the full pipeline.
"""
import math

import numpy as np
import pytest

from achelous.autograd.tensor import Tensor
from achelous.data.synth import SceneSpec, generate_samples
from achelous.evaluation.bench import bench_config, synthetic_inputs
from achelous.evaluation.evaluate import evaluate_model, load_model
from achelous.evaluation.metrics import compute_map, compute_miou
from achelous.models.config import ModelConfig
from achelous.models.postprocess import Detections
from achelous.training.losses import LogVariances, total_loss
from achelous.training.optim import SGD
from achelous.training.trainer import run_training
from core.config import RunConfig


# =============================================================================
# Metric oracles
# =============================================================================

def iou(a, b):
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = w * h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def oracle_ap50(images):
    """Single-class AP at IoU 0.5 with per-image greedy matching and 101-point interpolation."""
    pooled, num_gt = [], 0
    for boxes, scores, gts in images:
        num_gt += len(gts)
        taken = set()
        for d in sorted(range(len(boxes)), key=lambda i: -scores[i]):
            best, best_iou = None, -1.0
            for g, gt in enumerate(gts):
                if g not in taken and iou(boxes[d], gt) > best_iou:
                    best, best_iou = g, iou(boxes[d], gt)
            hit = best is not None and best_iou >= 0.5
            if hit:
                taken.add(best)
            pooled.append((scores[d], hit))
    if num_gt == 0:
        return 0.0
    pooled.sort(key=lambda item: -item[0])
    precision, recall, tp = [], [], 0
    for rank, (_, hit) in enumerate(pooled, start=1):
        tp += hit
        precision.append(tp / rank)
        recall.append(tp / num_gt)
    total = 0.0
    for r in np.linspace(0, 1, 101):
        reachable = [p for p, q in zip(precision, recall) if q >= r]
        total += max(reachable) if reachable else 0.0
    return total / 101


def random_images(rng):
    images = []
    for _ in range(3):
        corners = rng.uniform(0, 40, size=(int(rng.integers(0, 4)), 2))
        gts = [list(c) + list(c + rng.uniform(5, 20, 2)) for c in corners]
        boxes = [list(np.asarray(g) + rng.normal(0, 2, 4)) for g in gts if rng.uniform() < 0.8]
        boxes += [list(c) + list(c + rng.uniform(5, 20, 2)) for c in rng.uniform(0, 40, size=(int(rng.integers(0, 3)), 2))]
        boxes = [[b[0], b[1], max(b[2], b[0] + 1), max(b[3], b[1] + 1)] for b in boxes]
        images.append((boxes, list(rng.uniform(0, 1, len(boxes))), gts))
    return images


@pytest.mark.parametrize("seed", range(50))
def test_map_matches_oracle(seed):
    images = random_images(np.random.default_rng(seed))
    predictions = [Detections(np.array(b, dtype=float).reshape(-1, 4), np.zeros(len(b), dtype=int), np.array(s))
                   for b, s, _ in images]
    truths = [(np.array(g, dtype=float).reshape(-1, 4), np.zeros(len(g), dtype=int)) for _, _, g in images]
    metrics = compute_map(predictions, truths, num_classes=1, iou_thresholds=[0.5])
    assert metrics.mAP_50 == pytest.approx(oracle_ap50(images), abs=1e-6)


@pytest.mark.parametrize("seed", range(50))
def test_miou_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 4, size=(6, 7))
    pred = np.where(rng.uniform(size=gt.shape) < 0.6, gt, rng.integers(0, 4, size=gt.shape))
    ious = []
    for c in range(4):
        union = np.sum((gt == c) | (pred == c))
        if union:
            ious.append(np.sum((gt == c) & (pred == c)) / union)
    _, miou = compute_miou(pred, gt, 4)
    assert miou == pytest.approx(np.mean(ious), abs=1e-6)


# =============================================================================
# Uncertainty weighting
# =============================================================================

def test_log_variances_settle_at_log_loss():
    losses = {"det": 4.0, "pc": 0.5}
    log_vars = LogVariances(tuple(losses))
    optimizer = SGD(log_vars.named_parameters(), lr=0.1, momentum=0.0)
    for _ in range(500):
        optimizer.zero_grad()
        total_loss({task: Tensor(np.array(value)) for task, value in losses.items()}, log_vars).backward()
        optimizer.step()
    for task, value in losses.items():
        assert log_vars[task].item() == pytest.approx(math.log(value), rel=0.05)


# =============================================================================
# Long runs
# =============================================================================

@pytest.mark.slow
def test_overfits_a_handful_of_scenes(tmp_path):
    samples = generate_samples(SceneSpec(seed=1, image_size=64), 4)
    run = RunConfig(channels=(8, 16, 32, 64), width=16, image_size=64, epochs=60, batch_size=4,
                    warmup_epochs=2, out_dir=str(tmp_path), checkpoint_every=60)
    result = run_training(run, samples)
    assert result.train_curve[-1] < 0.75 * result.train_curve[0]


@pytest.mark.slow
def test_s0_memorizes_sixteen_scenes(tmp_path):
    samples = generate_samples(SceneSpec(seed=3, image_size=128), 16)
    run = RunConfig(size="s0", neck="gdf", fusion="fpn", image_size=128, epochs=300, batch_size=4,
                    out_dir=str(tmp_path), checkpoint_every=300)
    model, _ = load_model(run_training(run, samples).checkpoint)
    det, seg = evaluate_model(model, samples)
    assert det.mAP_50 >= 0.90
    assert seg.mIoU_targets >= 0.90
    assert seg.mIoU_drivable >= 0.95
    assert seg.mIoU_waterline >= 0.80
    assert seg.pc_accuracy >= 0.90


@pytest.mark.slow
def test_radar_conv_matches_or_beats_plain_conv(tmp_path):
    spec = SceneSpec(seed=4, image_size=64)
    train, val = generate_samples(spec, 48), generate_samples(spec, 24, start=48)
    scores = {}
    for variant in ("radar_conv", "plain_conv"):
        run = RunConfig(radar_conv=variant, channels=(8, 16, 32, 64), width=16, image_size=64, epochs=40,
                        batch_size=8, warmup_epochs=2, tasks="det", out_dir=str(tmp_path / variant),
                        checkpoint_every=40)
        model, _ = load_model(run_training(run, train).checkpoint)
        scores[variant] = evaluate_model(model, val)[0].mAP_50_95
    assert scores["radar_conv"] >= scores["plain_conv"]


@pytest.mark.slow
def test_unified_forward_beats_standalone_sum():
    inputs = synthetic_inputs(128, 64)
    rows = bench_config(ModelConfig.for_size("s0"), inputs, warmup=3, runs=10)
    unified = rows[0].mean_ms
    total = next(r for r in rows if r.kind == "standalone_sum").mean_ms
    slowest = next(r for r in rows if r.kind == "standalone_max").mean_ms
    assert unified < 0.85 * total
    assert unified <= 4 * slowest
