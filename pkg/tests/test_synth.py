import numpy as np
import pytest
from pydantic import ValidationError

from achelous.data.synth import (
    BACKGROUND,
    DRIVABLE,
    SceneSpec,
    generate_sample,
    generate_samples,
    layout_scene,
    power_db,
    silhouette,
)
from achelous.models.config import DETECTION_CLASSES
from achelous.radar.geometry import CLUTTER


@pytest.fixture(scope="module")
def spec():
    return SceneSpec(seed=7, image_size=64)


@pytest.fixture(scope="module")
def samples(spec):
    return generate_samples(spec, 6)


class TestSceneSpec:
    def test_image_size_floor(self):
        with pytest.raises(ValidationError):
            SceneSpec(image_size=16)

    def test_target_range(self):
        with pytest.raises(ValidationError):
            SceneSpec(min_targets=3, max_targets=2)

    def test_unknown_field(self):
        with pytest.raises(ValidationError):
            SceneSpec(targets=3)


class TestGeneration:
    def test_deterministic(self, spec):
        a, b = generate_sample(spec, 2), generate_sample(spec, 2)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.radar.as_array(), b.radar.as_array())
        np.testing.assert_array_equal(a.boxes, b.boxes)

    def test_index_changes_scene(self, spec):
        assert not np.array_equal(generate_sample(spec, 0).image, generate_sample(spec, 1).image)

    def test_shapes_and_ranges(self, samples):
        for sample in samples:
            assert sample.image.shape == sample.rvp.shape == (3, 64, 64)
            assert sample.image.dtype == np.float32
            assert sample.seg.shape == sample.waterline.shape == (64, 64)
            assert set(np.unique(sample.waterline)) <= {0, 1}
            assert sample.seg.max() <= BACKGROUND
            assert len(sample.point_labels) == len(sample.radar) > 0

    def test_image_is_quantized(self, samples):
        scaled = samples[0].image.astype(np.float64) * 255
        np.testing.assert_allclose(scaled, np.rint(scaled), atol=1e-3)

    def test_boxes_inside_image_and_below_water(self, samples):
        for sample in samples:
            assert len(sample.boxes) == len(sample.classes)
            if len(sample.boxes):
                assert sample.boxes.min() >= 0 and sample.boxes.max() <= 64
                assert np.all(sample.boxes[:, 2] > sample.boxes[:, 0])

    def test_segmentation_agrees_with_boxes(self, samples):
        for sample in samples:
            for box, class_id in zip(sample.boxes.astype(int), sample.classes):
                x1, y1, x2, y2 = box
                assert (sample.seg[y1:y2, x1:x2] == class_id).any()
            assert (sample.seg == DRIVABLE).any()

    def test_target_returns_carry_their_class(self, samples):
        for sample in samples:
            labelled = set(sample.point_labels[sample.point_labels != CLUTTER].tolist())
            assert labelled == set(sample.classes.tolist())

    def test_rvp_marks_radar_pixels(self, samples):
        for sample in samples:
            assert 0 < np.count_nonzero(sample.rvp[0]) <= len(sample.radar)
            assert sample.rvp.min() >= 0 and sample.rvp.max() <= 1

    def test_generate_samples_start(self, spec):
        (sample,) = generate_samples(spec, 1, start=4)
        assert sample.index == 4
        np.testing.assert_array_equal(sample.image, generate_sample(spec, 4).image)


class TestDegradation:
    def test_dark_scene(self, spec):
        sample = generate_sample(spec.model_copy(update={"degradation": "dark"}), 0)
        assert sample.image.mean() < 0.25
        assert sample.degradation == "dark"

    def test_fog_lifts_every_pixel(self, spec):
        assert generate_sample(spec.model_copy(update={"degradation": "fog"}), 0).image.min() >= 0.6 - 1e-6

    @pytest.mark.parametrize("mode", ["dark", "fog", "droplet"])
    def test_radar_and_labels_unchanged(self, spec, mode):
        clean = generate_sample(spec, 3)
        degraded = generate_sample(spec.model_copy(update={"degradation": mode}), 3)
        assert not np.array_equal(clean.image, degraded.image)
        np.testing.assert_array_equal(clean.rvp, degraded.rvp)
        np.testing.assert_array_equal(clean.radar.as_array(), degraded.radar.as_array())
        np.testing.assert_array_equal(clean.seg, degraded.seg)
        np.testing.assert_array_equal(clean.point_labels, degraded.point_labels)


class TestPhysics:
    def test_inverse_square_power(self):
        ratio_db = power_db(20.0, np.array([10.0]))[0] - power_db(20.0, np.array([40.0]))[0]
        assert 10 ** (ratio_db / 10) == pytest.approx(16.0)

    def test_larger_cross_section_is_stronger(self):
        assert power_db(500.0, np.array([50.0]))[0] > power_db(1.0, np.array([50.0]))[0]

    @pytest.mark.parametrize("name", DETECTION_CLASSES)
    def test_silhouettes_are_never_empty(self, name):
        assert silhouette(name, 3, 3).any()
        assert silhouette(name, 12, 20).shape == (12, 20)

    def test_horizon_sets_principal_point(self, spec):
        geometry = layout_scene(spec, 0)
        assert 0.3 * 64 <= geometry.calib.cy <= 0.5 * 64
        assert geometry.calib.fx == 64.0
