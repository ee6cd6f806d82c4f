import numpy as np
import pytest
from PIL import Image

from trainscape.errors import BundleError, ContractError
from trainscape.landscape import (EpochBundle, LandscapeRaster, SampleRecord,
                                  colorize, default_palette, evaluate_grid_points,
                                  export_bundle, load_bundle, make_sample_records,
                                  parse_raster_payload, raster_payload,
                                  render_landscape, render_png_bytes,
                                  sample_trajectory)
from trainscape.numerics import MlpParams
from trainscape.subject import SubjectCheckpoint, features, predict
from trainscape.visualizer import fit_epoch, project, TrainSchedule, VisualizationModel


def constant_decoder_model(h, rep):
    enc = MlpParams([h, 2], [np.zeros((h, 2), dtype=np.float32)],
                    [np.zeros((1, 2), dtype=np.float32)], ["identity"])
    dec = MlpParams([2, h], [np.zeros((2, h), dtype=np.float32)],
                    [np.asarray(rep, dtype=np.float32).reshape(1, h)], ["identity"])
    return VisualizationModel(1, enc, dec)


def simple_checkpoint(h=3, seed=0):
    rng = np.random.default_rng(seed)
    feature = MlpParams([h, h], [np.eye(h, dtype=np.float32)],
                        [np.zeros((1, h), dtype=np.float32)], ["identity"])
    head = MlpParams([h, 3], [rng.standard_normal((h, 3)).astype(np.float32)],
                     [np.zeros((1, 3), dtype=np.float32)], ["identity"])
    return SubjectCheckpoint(1, feature, head)


@pytest.fixture(scope="module")
def trained_scene(blob_data, blob_checkpoints):
    from trainscape.boundary import synthesize_boundary_set
    from trainscape.neighbor_complex import attach_fuzzy_weights, build_complex

    train, _ = blob_data
    ckpt = blob_checkpoints[-1]
    reps = features(ckpt, train.inputs)
    bset = synthesize_boundary_set(ckpt, train, 20, seed=2)
    complex_ = attach_fuzzy_weights(build_complex(reps, bset.points, k=5))
    model, _ = fit_epoch(ckpt, complex_, schedule=TrainSchedule(epochs=6), seed=4,
                         record_full_loss=False)
    emb = project(model, reps)
    raster = render_landscape(model, ckpt, emb, resolution=120, delta=0.1)
    return train, ckpt, model, reps, emb, raster


class TestRender:
    def test_constant_decoder_uniform_class(self):
        ckpt = simple_checkpoint(seed=1)
        rep = np.array([4.0, 0.0, 0.0], dtype=np.float32)
        logits, top1, _ = predict(ckpt, rep.reshape(1, -1))
        model = constant_decoder_model(3, rep)
        raster = render_landscape(model, ckpt, np.array([[0, 0], [1, 1]]),
                                  resolution=50, delta=0.1)
        assert not raster.boundary.any()
        assert np.all(raster.class_id == top1[0])

    def test_zero_delta_has_no_boundary_band(self, trained_scene):
        train, ckpt, model, reps, emb, _ = trained_scene
        raster = render_landscape(model, ckpt, emb, resolution=60, delta=0.0)
        assert raster.boundary.sum() == 0

    def test_extent_contains_all_training_points(self, trained_scene):
        _, _, _, _, emb, raster = trained_scene
        x_min, x_max, y_min, y_max = raster.extent
        assert emb[:, 0].min() > x_min and emb[:, 0].max() < x_max
        assert emb[:, 1].min() > y_min and emb[:, 1].max() < y_max

    def test_audit_pixels_reproduce_stored_values(self, trained_scene):
        _, ckpt, model, _, _, raster = trained_scene
        rng = np.random.default_rng(0)
        rows = rng.integers(0, raster.height, size=1000)
        cols = rng.integers(0, raster.width, size=1000)
        xs, ys = raster.pixel_centers()
        pts = np.stack([xs[cols], ys[rows]], axis=1)
        classes, confidence, boundary = evaluate_grid_points(model, ckpt, pts,
                                                             raster.delta)
        assert np.array_equal(classes, raster.class_id[rows, cols])
        assert np.array_equal(boundary, raster.boundary[rows, cols])
        assert np.array_equal(confidence, raster.confidence[rows, cols])

    def test_sample_pixels_agree_with_direct_recomputation(self, trained_scene):
        train, ckpt, model, reps, emb, raster = trained_scene
        from trainscape.visualizer import inverse_project
        round_trip = inverse_project(model, project(model, reps))
        _, recomputed, _ = predict(ckpt, round_trip)
        checked = 0
        for i in range(train.n):
            row, col = raster.pixel_of(emb[i, 0], emb[i, 1])
            if raster.boundary[row, col]:
                continue
            assert raster.class_id[row, col] == recomputed[i]
            checked += 1
        assert checked > 0.5 * train.n

    def test_resolution_floor(self, trained_scene):
        _, ckpt, model, _, emb, _ = trained_scene
        with pytest.raises(ContractError):
            render_landscape(model, ckpt, emb, resolution=49)


class TestPalette:
    def test_palette_excludes_white_and_is_injective(self):
        palette = default_palette(10)
        assert len(set(palette)) == 10
        assert (255, 255, 255) not in palette

    def test_white_appears_only_on_boundary(self, trained_scene):
        _, ckpt, _, _, _, raster = trained_scene
        rgb = colorize(raster, default_palette(3), 3)
        white = np.all(rgb == 255, axis=-1)
        assert np.array_equal(white, raster.boundary)

    def test_lightness_strictly_decreasing_in_confidence(self):
        palette = default_palette(3)
        confidences = np.linspace(1 / 3, 1.0, 12, dtype=np.float32)
        raster = LandscapeRaster(12, 1, (0, 1, 0, 1),
                                 np.zeros((1, 12), dtype=np.uint8),
                                 confidences.reshape(1, 12),
                                 np.zeros((1, 12), dtype=bool), 0.1)
        rgb = colorize(raster, palette, 3).astype(np.int64)
        lightness = rgb.sum(axis=-1)[0]
        assert np.all(np.diff(lightness) < 0)


class TestBundleIO:
    def make_bundle(self, raster):
        records = make_sample_records(["train-0", "train-1"],
                                      np.array([[0.1, 0.2], [0.3, 0.4]]),
                                      np.array([0, 1]), np.array([1, 1]),
                                      np.array([0.9, 0.8]))
        return EpochBundle(1, records, raster, {"ppr": 0.9}, default_palette(3), 3)

    def test_round_trip_bit_identical(self, trained_scene, tmp_path):
        *_, raster = trained_scene
        bundle = self.make_bundle(raster)
        export_bundle(bundle, tmp_path / "epoch_001")
        loaded = load_bundle(tmp_path / "epoch_001")
        assert np.array_equal(loaded.raster.class_id, raster.class_id)
        assert np.array_equal(loaded.raster.boundary, raster.boundary)
        assert np.array_equal(loaded.raster.confidence, raster.confidence)
        assert loaded.raster.extent == raster.extent
        assert [r.to_json() for r in loaded.embeddings] == [
            r.to_json() for r in bundle.embeddings]
        assert loaded.metrics == bundle.metrics

    def test_png_dimensions_match_raster(self, trained_scene, tmp_path):
        *_, raster = trained_scene
        png = render_png_bytes(raster, default_palette(3), 3)
        from io import BytesIO
        image = Image.open(BytesIO(png))
        assert image.size == (raster.width, raster.height)

    def test_missing_metadata_is_structured_error(self, tmp_path):
        with pytest.raises(BundleError, match="metadata"):
            load_bundle(tmp_path / "nope")

    def test_corrupt_payload_rejected(self, trained_scene, tmp_path):
        *_, raster = trained_scene
        blob = raster_payload(raster)
        with pytest.raises(BundleError, match="corrupt"):
            parse_raster_payload(blob[:-5], raster.extent, 0.1)
        with pytest.raises(BundleError, match="magic"):
            parse_raster_payload(b"XXXX" + blob[4:], raster.extent, 0.1)

    def test_white_palette_rejected(self, trained_scene):
        *_, raster = trained_scene
        records = []
        with pytest.raises(ContractError):
            EpochBundle(1, records, raster, {}, [(255, 255, 255), (0, 0, 0)], 2)


class TestTrajectory:
    def bundles_for(self, raster, positions):
        bundles = []
        for epoch, pos in enumerate(positions, start=1):
            records = [SampleRecord("s-0", float(pos[0]), float(pos[1]), 0, 0, 0.5)]
            bundles.append(EpochBundle(epoch, records, raster, {},
                                       default_palette(3), 3))
        return bundles

    def test_single_epoch_trajectory(self, trained_scene):
        *_, raster = trained_scene
        bundles = self.bundles_for(raster, [(0.0, 0.0)])
        assert sample_trajectory(bundles, "s-0") == [(1, 0.0, 0.0, 0, 0.5)]

    def test_epochs_strictly_increasing(self, trained_scene):
        *_, raster = trained_scene
        bundles = self.bundles_for(raster, [(0, 0), (1, 1), (2, 2)])
        trajectory = sample_trajectory(list(reversed(bundles)), "s-0")
        epochs = [t[0] for t in trajectory]
        assert epochs == sorted(epochs) == [1, 2, 3]

    def test_unknown_id_rejected(self, trained_scene):
        *_, raster = trained_scene
        bundles = self.bundles_for(raster, [(0, 0)])
        with pytest.raises(ContractError, match="missing"):
            sample_trajectory(bundles, "ghost")
