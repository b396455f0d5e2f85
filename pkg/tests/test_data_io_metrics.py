"""
Tests for synthetic data, file formats and segmentation metrics.
"""

import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path for imports
sys.path.append(str(Path(__file__).parent.parent / "src"))

from src.data.file_io import load_manifest, load_tensor, read_pgm, save_dataset, save_tensor, write_pgm
from src.data.synthetic import SyntheticSpec, gen_synthetic, render_bar
from src.tensor.serialization import FormatError
from src.training.metrics import (
    REPORT_COLUMNS,
    SurfaceDistanceUndefined,
    boundary,
    cosine_distance,
    metric_report,
    overlap_metrics,
    surface_metrics,
)
from src.utils.helpers import load_config, resolve_config


def surface_oracle(pred, gt):
    """All-pairs Euclidean distances between the two boundaries."""
    p = np.argwhere(boundary(pred)).astype(float)
    g = np.argwhere(boundary(gt)).astype(float)
    distances = np.sqrt(((p[:, None, :] - g[None, :, :]) ** 2).sum(axis=-1))
    forward, backward = distances.min(axis=1), distances.min(axis=0)
    return {"asd": (forward.mean() + backward.mean()) / 2.0,
            "hd95": max(np.percentile(forward, 95), np.percentile(backward, 95))}


def small_spec(**overrides):
    values = dict(image_size=16, thickness_range=(1, 3), length_range=(4, 10), num_labeled=4,
                  num_unlabeled=6, num_test=5, seed=0)
    values.update(overrides)
    return SyntheticSpec(**values)


class TestSynthetic:
    """Directional bar generator."""

    @pytest.fixture
    def config(self):
        """Load test configuration."""
        return resolve_config(load_config("config/config.yaml"))

    def test_vertical_bar_columns(self):
        mask = render_bar(32, "vertical", 5, 10, 2, 12)
        assert set(np.nonzero(mask)[1].tolist()) == {10, 11}
        assert mask.sum() == 24

    def test_tilted_bar_shifts_per_row(self):
        mask = render_bar(8, "tilted", 0, 0, 2, 3)
        assert mask[0, :3].tolist() == [1, 1, 0]
        assert mask[2, :4].tolist() == [0, 0, 1, 1]

    def test_bar_outside_image_raises(self):
        with pytest.raises(ValueError):
            render_bar(8, "tilted", 0, 4, 2, 6)

    def test_noise_free_image_matches_label(self):
        dataset = gen_synthetic(small_spec(noise_sigma=0.0))
        images, masks = dataset.labeled_images, dataset.labeled_masks
        np.testing.assert_allclose(images, 0.2 + 0.6 * masks, atol=1e-15)

    def test_same_seed_is_bitwise_identical(self):
        first, second = gen_synthetic(small_spec()), gen_synthetic(small_spec())
        assert first.unlabeled_images.tobytes() == second.unlabeled_images.tobytes()
        assert first.test_masks.tobytes() == second.test_masks.tobytes()
        assert first.test_families == second.test_families

    def test_split_sizes_and_families(self, config):
        dataset = gen_synthetic(SyntheticSpec.from_config(config))
        assert dataset.labeled_images.shape == (8, 32, 32)
        assert len(dataset.unlabeled_images) == 56
        assert len(dataset.test_families) == 16
        vertical, _ = dataset.test_subset("vertical")
        tilted, _ = dataset.test_subset("tilted")
        assert len(vertical) + len(tilted) == 16
        assert dataset.image_size == 32

    def test_degenerate_extents_raise(self):
        with pytest.raises(ValueError):
            gen_synthetic(small_spec(image_size=2))
        with pytest.raises(ValueError):
            gen_synthetic(small_spec(length_range=(4, 20)))
        with pytest.raises(ValueError):
            gen_synthetic(small_spec(families=("spiral",)))


class TestFileFormats:
    """PGM, DCT1 and dataset manifests."""

    def test_pgm_size_and_quantization(self, tmp_path):
        write_pgm(tmp_path / "zero.pgm", np.zeros((4, 4)))
        assert (tmp_path / "zero.pgm").stat().st_size == len(b"P5\n4 4\n255\n") + 16
        write_pgm(tmp_path / "half.pgm", np.full((2, 3), 0.5))
        image = read_pgm(tmp_path / "half.pgm")
        assert image.shape == (2, 3)
        np.testing.assert_allclose(image, 127 / 255)

    def test_pgm_accepts_comments(self, tmp_path):
        path = tmp_path / "comment.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 1\n255\n" + bytes([0, 255]))
        assert read_pgm(path).tolist() == [[0.0, 1.0]]

    def test_pgm_bad_header_reports_offset(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n2 x\n255\n" + bytes(2))
        with pytest.raises(FormatError) as excinfo:
            read_pgm(path)
        assert excinfo.value.offset == 5

    def test_pgm_truncated_raster_raises(self, tmp_path):
        path = tmp_path / "short.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
        with pytest.raises(FormatError):
            read_pgm(path)

    def test_tensor_round_trip(self, tmp_path):
        array = np.random.default_rng(0).normal(size=(3, 5))
        save_tensor(tmp_path / "t.dct", array)
        assert load_tensor(tmp_path / "t.dct").tobytes() == array.tobytes()

    def test_dataset_round_trip(self, tmp_path):
        dataset = gen_synthetic(small_spec())
        manifest = save_dataset(dataset, tmp_path)
        restored = load_manifest(manifest)
        assert restored.labeled_images.tobytes() == dataset.labeled_images.tobytes()
        np.testing.assert_array_equal(restored.test_masks, dataset.test_masks)
        assert restored.unlabeled_images.shape == dataset.unlabeled_images.shape
        assert restored.test_families == dataset.test_families

    def test_manifest_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_manifest(tmp_path / "missing.tsv")
        manifest = tmp_path / "manifest.tsv"
        manifest.write_text("unlabeled\ta.dct\t-\nvalidation\tb.dct\t-\n", encoding="utf-8")
        save_tensor(tmp_path / "a.dct", np.zeros((4, 4)))
        with pytest.raises(FormatError) as excinfo:
            load_manifest(manifest)
        assert excinfo.value.offset == len("unlabeled\ta.dct\t-\n")


class TestOverlapMetrics:
    """Confusion-matrix metrics."""

    def test_perfect_prediction(self):
        gt = np.random.default_rng(0).integers(0, 2, (6, 6))
        metrics = overlap_metrics(gt, gt)
        assert metrics["mean_dice"] == 1.0 and metrics["miou"] == 1.0 and metrics["acc"] == 1.0

    def test_background_prediction(self):
        gt = np.zeros((4, 4), dtype=int)
        gt[:2] = 1
        metrics = overlap_metrics(np.zeros_like(gt), gt)
        assert metrics["sen"] == 0.0
        assert metrics["spe"] == 1.0

    def test_hand_counted_case(self):
        gt = np.zeros((4, 4), dtype=int)
        gt[:2, :2] = 1
        pred = np.zeros((4, 4), dtype=int)
        pred[0, :2] = 1
        pred[2, 2] = 1
        metrics = overlap_metrics(pred, gt)
        assert metrics["mean_dice"] == pytest.approx(4 / 7)
        assert metrics["miou"] == pytest.approx(2 / 5)
        assert metrics["acc"] == pytest.approx(13 / 16)
        assert metrics["spe"] == pytest.approx(11 / 12)
        assert metrics["sen"] == pytest.approx(2 / 4)

    def test_empty_ground_truth(self):
        pred = np.zeros((3, 3), dtype=int)
        pred[1, 1] = 1
        metrics = overlap_metrics(pred, np.zeros((3, 3), dtype=int))
        assert metrics["mean_dice"] == 0.0
        assert metrics["sen"] is None
        both_empty = overlap_metrics(np.zeros((3, 3), dtype=int), np.zeros((3, 3), dtype=int))
        assert both_empty["mean_dice"] == 1.0

    def test_foreground_relabeling_invariance(self):
        rng = np.random.default_rng(1)
        pred, gt = rng.integers(0, 3, (8, 8)), rng.integers(0, 3, (8, 8))
        swap = np.array([0, 2, 1])
        original, relabeled = overlap_metrics(pred, gt, 3), overlap_metrics(swap[pred], swap[gt], 3)
        assert relabeled["mean_dice"] == pytest.approx(original["mean_dice"])
        assert relabeled["miou"] == pytest.approx(original["miou"])

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            overlap_metrics(np.zeros((2, 2)), np.zeros((3, 3)))


class TestSurfaceMetrics:
    """Boundary distances."""

    def test_identical_masks(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[1:4, 2:5] = True
        assert surface_metrics(mask, mask) == {"asd": 0.0, "hd95": 0.0}

    def test_single_pixels_three_apart(self):
        a, b = np.zeros((5, 7), dtype=bool), np.zeros((5, 7), dtype=bool)
        a[2, 1] = True
        b[2, 4] = True
        assert surface_metrics(a, b) == {"asd": 3.0, "hd95": 3.0}

    def test_empty_masks(self):
        empty = np.zeros((4, 4), dtype=bool)
        assert surface_metrics(empty, empty) == {"asd": 0.0, "hd95": 0.0}
        full = empty.copy()
        full[1, 1] = True
        with pytest.raises(SurfaceDistanceUndefined) as excinfo:
            surface_metrics(full, empty)
        assert excinfo.value.code == "undefined surface distance"

    def test_boundary_uses_four_connectivity(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[1:4, 1:4] = True
        edge = boundary(mask)
        assert edge.sum() == 8
        assert not edge[2, 2]

    def test_matches_all_pairs_oracle_and_is_symmetric(self):
        rng = np.random.default_rng(2)
        checked = 0
        while checked < 50:
            size = int(rng.integers(3, 17))
            a, b = rng.random((size, size)) < 0.3, rng.random((size, size)) < 0.3
            if not boundary(a).any() or not boundary(b).any():
                continue
            result, oracle = surface_metrics(a, b), surface_oracle(a, b)
            assert result["asd"] == pytest.approx(oracle["asd"], abs=1e-12)
            assert result["hd95"] == pytest.approx(oracle["hd95"], abs=1e-12)
            assert surface_metrics(b, a) == pytest.approx(result, abs=1e-12)
            checked += 1


class TestMetricReport:
    """Per-image evaluation and aggregation."""

    def test_oracle_predictions(self):
        gts = [render_bar(8, "vertical", 1, 2, 2, 5), render_bar(8, "tilted", 0, 0, 2, 4)]
        report = metric_report(gts, gts)
        assert report.summary["dice"] == 1.0
        assert report.summary["asd"] == 0.0
        assert list(report.per_image.columns) == ["image"] + REPORT_COLUMNS
        assert "dice" in report.table()

    def test_undefined_surface_is_excluded(self):
        gt = render_bar(8, "vertical", 1, 2, 2, 5)
        report = metric_report([gt, np.zeros_like(gt)], [gt, gt])
        assert report.undefined_surface == 1
        assert report.summary["asd"] == 0.0
        assert report.per_image["hd95"].isna().iloc[1]

    def test_repeated_evaluation_is_identical(self):
        rng = np.random.default_rng(3)
        preds, gts = list(rng.integers(0, 2, (3, 6, 6))), list(rng.integers(0, 2, (3, 6, 6)))
        assert metric_report(preds, gts) == metric_report(preds, gts)

    def test_empty_dataset_raises(self):
        with pytest.raises(ValueError):
            metric_report([], [])


class TestCosineDistance:
    """Feature diversity measure."""

    def test_point_values(self):
        assert cosine_distance([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
        assert cosine_distance([1.0, 0.0], [0.0, 3.0]) == 1.0
        assert cosine_distance([1.0, -1.0], [-2.0, 2.0]) == pytest.approx(2.0, abs=1e-15)

    def test_zero_norm_raises(self):
        with pytest.raises(ValueError):
            cosine_distance([0.0, 0.0], [1.0, 0.0])


if __name__ == "__main__":
    pytest.main([__file__])
