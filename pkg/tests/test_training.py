"""
Tests for losses, the optimizer and schedule, run configuration and the training loop.
"""
import math

import numpy as np
import pytest

from achelous.autograd.nn import Module, Parameter
from achelous.autograd.tensor import Tensor
from achelous.data.dataset import collate
from achelous.data.synth import SceneSpec, generate_samples
from achelous.evaluation.evaluate import load_model, predict
from achelous.models.achelous_net import AchelousNet
from achelous.models.heads import DetPrediction
from achelous.training.config import TrainConfig
from achelous.training.losses import (
    LogVariances,
    detection_loss,
    dice_loss,
    focal_loss,
    nll_loss,
    one_hot,
    total_loss,
)
from achelous.training.optim import SGD, ModelEMA, cosine_lr, ema_update
from achelous.training.trainer import compute_losses, forward_batch, run_training, train_step
from core.config import RunConfig, build_run_config, load_run_config, parse_key_values
from core.errors import AchelousError, ConfigError, ShapeError


@pytest.fixture(scope="module")
def tiny_samples():
    return generate_samples(SceneSpec(seed=3, image_size=64), 4)


def random_prediction(rng, shapes=((8, 8), (4, 4), (2, 2))):
    def maps(c):
        return [Tensor(rng.normal(0, 0.1, size=(1, c, h, w)), requires_grad=True) for h, w in shapes]
    return DetPrediction(maps(7), maps(4), maps(1), (8, 16, 32))


# =============================================================================
# Losses
# =============================================================================

class TestLosses:
    def test_focal_loss_at_even_odds(self):
        loss = focal_loss(Tensor(np.zeros((1, 1))), np.ones((1, 1)))
        assert loss.item() == pytest.approx(0.25 * 0.25 * math.log(2), rel=1e-6)

    def test_focal_loss_without_modulation_is_bce(self):
        loss = focal_loss(Tensor(np.zeros((2, 2))), np.eye(2), alpha=None, gamma=0.0)
        assert loss.item() == pytest.approx(math.log(2), rel=1e-6)

    def test_focal_loss_normalizer(self):
        logits = Tensor(np.zeros((4, 1)))
        targets = np.ones((4, 1))
        assert focal_loss(logits, targets, normalizer=2.0).item() == pytest.approx(
            2 * focal_loss(logits, targets).item(), rel=1e-6)

    def test_focal_loss_shape_mismatch(self):
        with pytest.raises(ShapeError):
            focal_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_dice_exact_match_is_zero(self):
        target = one_hot(np.array([[[0, 1], [1, 0]]]), 2)
        assert dice_loss(Tensor(target), target).item() == pytest.approx(0.0, abs=1e-7)

    def test_dice_half_overlap(self):
        target = np.ones((1, 1, 1, 4))
        probs = Tensor(np.array([[[[1.0, 1.0, 0.0, 0.0]]]]))
        assert dice_loss(probs, target, eps=1e-9).item() == pytest.approx(1 / 3, rel=1e-6)

    def test_one_hot_layout(self):
        assert one_hot(np.zeros((2, 3, 4), dtype=int), 5).shape == (2, 5, 3, 4)

    def test_nll_uniform(self):
        log_probs = Tensor(np.full((1, 3, 8), -math.log(8)))
        assert nll_loss(log_probs, np.array([[0, 5, 7]])).item() == pytest.approx(math.log(8))

    def test_nll_ignores_masked_points(self):
        log_probs = np.full((1, 2, 8), -math.log(8))
        log_probs[0, 1] = -100.0
        loss = nll_loss(Tensor(log_probs), np.array([[1, 1]]), np.array([[True, False]]))
        assert loss.item() == pytest.approx(math.log(8))

    def test_nll_all_masked(self):
        with pytest.raises(ShapeError):
            nll_loss(Tensor(np.zeros((1, 2, 8))), np.zeros((1, 2)), np.zeros((1, 2), dtype=bool))

    def test_uncertainty_weighting_gradient(self):
        log_vars = LogVariances(("det", "pc"))
        total = total_loss({"det": Tensor(np.array(2.0)), "pc": Tensor(np.array(0.5))}, log_vars)
        total.backward()
        assert total.item() == pytest.approx(2.5)
        assert log_vars["det"].grad == pytest.approx(-1.0)
        assert log_vars["pc"].grad == pytest.approx(0.5)

    def test_uncertainty_weighting_skips_disabled_tasks(self):
        log_vars = LogVariances()
        log_vars["seg_td"].data[...] = math.log(2)
        total = total_loss({"seg_td": Tensor(np.array(4.0))}, log_vars)
        assert total.item() == pytest.approx(2.0 + math.log(2), rel=1e-6)

    def test_detection_loss_with_targets(self, rng):
        pred = random_prediction(rng)
        losses, (assignment,) = detection_loss(pred, [np.array([[10.0, 10.0, 30.0, 30.0]])], [np.array([2])])
        assert assignment.num_positive >= 1
        assert set(losses) == {"det_cls", "det_obj", "det_box"}
        assert all(np.isfinite(v.item()) and v.item() > 0 for v in losses.values())

    def test_detection_loss_without_targets_keeps_graph(self, rng):
        pred = random_prediction(rng)
        losses, _ = detection_loss(pred, [np.zeros((0, 4))], [np.zeros(0, dtype=int)])
        assert losses["det_cls"].item() == 0.0 and losses["det_box"].item() == 0.0
        (losses["det_cls"] + losses["det_box"] + losses["det_obj"]).backward()
        assert all(t.grad is not None for t in pred.cls + pred.reg + pred.obj)


# =============================================================================
# Optimizer, schedule, EMA
# =============================================================================

class Scalar(Module):
    def __init__(self, value):
        super().__init__()
        self.p = Parameter(np.array([value], dtype=np.float64))


class TestOptim:
    def test_sgd_momentum(self):
        model = Scalar(1.0)
        sgd = SGD(model.named_parameters(), lr=0.1, momentum=0.9)
        for expected in (0.9, 0.71):
            model.p.grad = np.ones(1)
            sgd.step()
            assert model.p.data[0] == pytest.approx(expected)

    def test_sgd_requires_every_gradient(self):
        sgd = SGD(Scalar(1.0).named_parameters(), lr=0.1)
        with pytest.raises(AchelousError):
            sgd.step()

    def test_weight_decay_skips_vectors(self):
        model = Scalar(1.0)
        sgd = SGD(model.named_parameters(), lr=0.1, momentum=0.0, weight_decay=1.0)
        model.p.grad = np.zeros(1)
        sgd.step()
        assert model.p.data[0] == 1.0

    def test_cosine_schedule(self):
        assert cosine_lr(0, 10, 0.1, 0.0, warmup_steps=2) == 0.0
        assert cosine_lr(1, 10, 0.1, 0.0, warmup_steps=2) == pytest.approx(0.05)
        assert cosine_lr(2, 10, 0.1, 0.0, warmup_steps=2) == pytest.approx(0.1)
        assert cosine_lr(6, 10, 0.1, 0.0, warmup_steps=2) == pytest.approx(0.05)
        assert cosine_lr(10, 10, 0.1, 0.001, warmup_steps=2) == pytest.approx(0.001)

    def test_cosine_out_of_range(self):
        with pytest.raises(ConfigError):
            cosine_lr(11, 10)

    def test_ema_update(self):
        ema = {"w": np.ones(2)}
        ema_update(ema, {"w": np.zeros(2)}, 0.875)
        np.testing.assert_allclose(ema["w"], 0.875)

    def test_ema_keys_must_match(self):
        with pytest.raises(ConfigError):
            ema_update({"w": np.ones(1)}, {"v": np.ones(1)}, 0.5)

    def test_model_ema_ramp(self):
        model = Scalar(0.0)
        ema = ModelEMA(model, decay=0.9998, tau=2000.0)
        assert ema.current_decay() == 0.0
        decay = ema.update(model)
        assert decay == pytest.approx(0.9998 * (1 - math.exp(-1 / 2000)))
        model.p.data[...] = 1.0
        ema.update(model, decay=0.5)
        np.testing.assert_allclose(ema.state["p"], 0.5)

    def test_train_config_defaults(self):
        cfg = TrainConfig()
        assert cfg.lr_min == pytest.approx(3e-4)
        with pytest.raises(ValueError):
            TrainConfig(lr0=0.01, lr_min=0.1)


# =============================================================================
# Run configuration
# =============================================================================

class TestRunConfig:
    def test_parse_key_values(self):
        values = parse_key_values("# run\nsize = s1\nneck: cdf  # inline\n\nepochs=5\n")
        assert values == {"size": "s1", "neck": "cdf", "epochs": "5"}

    def test_duplicate_key(self):
        with pytest.raises(ConfigError):
            parse_key_values("size = s0\nsize = s1\n")

    def test_line_without_separator(self):
        with pytest.raises(ConfigError):
            parse_key_values("size s0\n")

    def test_image_size_must_divide_by_32(self):
        with pytest.raises(ConfigError):
            build_run_config({"image_size": "100"})

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            build_run_config({"sizes": "s0"})

    def test_tasks_and_channels_from_text(self):
        run = build_run_config({"tasks": "det, pc", "channels": "8,16,32,64", "width": "16", "size": "S0"})
        assert run.tasks == ("det", "pc")
        assert run.size == "s0"
        config = run.to_model_config()
        assert config.encoder.channels == (8, 16, 32, 64)
        assert config.neck.width == 16

    def test_text_round_trip(self, tmp_path):
        run = build_run_config({"size": "s1", "pointnet": "pn2", "channels": "8,16,32,64", "epochs": "3",
                                "out_dir": str(tmp_path), "tasks": "seg_td,seg_wl"})
        assert build_run_config(parse_key_values(run.to_text())) == run

    def test_load_with_overrides(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("size = s2\nepochs = 50\n")
        run = load_run_config(path, epochs=2, batch_size=None)
        assert (run.size, run.epochs, run.batch_size) == ("s2", 2, 32)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "absent.cfg")

    def test_train_config_carries_lr_ratio(self):
        cfg = build_run_config({"lr0": "0.02", "lr_min_ratio": "0.5"}).to_train_config()
        assert cfg.lr_min == pytest.approx(0.01)


# =============================================================================
# Training loop
# =============================================================================

class TestTrainer:
    def test_compute_losses_per_task(self, tiny_config, seeded, tiny_samples):
        model = AchelousNet(tiny_config)
        batch = collate(tiny_samples[:2])
        tasks, terms = compute_losses(forward_batch(model, batch), batch, TrainConfig())
        assert set(tasks) == {"det", "seg_td", "seg_wl", "pc"}
        assert set(terms) == {"det_cls", "det_obj", "det_box", "seg_targets", "seg_waterline", "pc_seg"}
        assert all(np.isfinite(v.item()) for v in tasks.values())

    def test_train_step_updates_parameters(self, tiny_config, seeded, tiny_samples):
        model = AchelousNet(tiny_config)
        log_vars = LogVariances()
        cfg = TrainConfig(batch_size=2, image_size=64)
        optimizer = SGD(list(model.named_parameters()) + list(log_vars.named_parameters("loss")), cfg.lr0)
        before = model.det_head.obj_pred.weight.data.copy()
        result = train_step(model, collate(tiny_samples[:2]), optimizer, log_vars, cfg, lr=0.01)
        assert math.isfinite(result.total) and result.grad_norm > 0
        assert not np.array_equal(before, model.det_head.obj_pred.weight.data)
        assert set(result.row()) >= {"step", "lr", "total", "s_det", "pc_seg"}

    def test_point_only_training(self, tiny_config, seeded, tiny_samples):
        model = AchelousNet(tiny_config, tasks=("pc",))
        log_vars = LogVariances(("pc",))
        cfg = TrainConfig(tasks=("pc",))
        optimizer = SGD(list(model.named_parameters()) + list(log_vars.named_parameters("loss")), cfg.lr0)
        result = train_step(model, collate(tiny_samples), optimizer, log_vars, cfg, lr=0.01)
        assert result.losses.det_cls == 0.0
        assert result.losses.pc_seg > 0

    def test_fit_writes_artifacts(self, tmp_path, tiny_samples):
        run = RunConfig(channels=(8, 16, 32, 64), width=16, image_size=64, epochs=1, batch_size=2,
                        warmup_epochs=0, out_dir=str(tmp_path))
        result = run_training(run, tiny_samples[:2], tiny_samples[2:])
        assert len(result.history) == 1
        assert len(result.val_curve) == 1 and math.isfinite(result.val_curve[0])
        assert result.log_path.read_text().splitlines()[0].startswith("step,lr,det_cls")
        assert (tmp_path / "checkpoints" / "epoch_0001.achl").is_file()
        assert result.checkpoint == tmp_path / "checkpoints" / "epoch_0001_ema.achl"
        assert result.checkpoint.with_suffix(".cfg").is_file()
        assert result.figure.is_file()

        model, loaded = load_model(result.checkpoint)
        assert loaded == run
        (prediction,) = predict(model, tiny_samples[:1])
        assert prediction.seg.shape == (64, 64)
        assert len(prediction.point_labels) == len(tiny_samples[0].radar)
