"""Patch pipeline, augmentation lockstep, oracle predictor, scene generation.

Geometric oracles are computed by hand from the stated conventions:
crop arithmetic on the 192x108 resize, the pixel permutation of an
exact 90-degree rotation, and the generator's own noise statistics.
"""

import hashlib

import numpy as np
import pytest

from surfreg.camera import CameraModel
from surfreg.datagen import (
    AugmentSpec,
    LabeledPatch,
    NoiseModel,
    PoseSampler,
    augment,
    make_patch,
    oracle_predict,
    read_manifest,
    synth_scene,
    transform_patch,
)
from surfreg.errors import BehindCameraError, SurfregError
from surfreg.geodesic import parameterize
from surfreg.raster import CoordinateMap, load_map
from surfreg.synthetic import landmark_patch


def _frame_and_map(seed=0, h=1080, w=1920):
    rng = np.random.default_rng(seed)
    frame = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    valid = rng.uniform(0, 1, (h, w)) > 0.5
    mu = np.where(valid, rng.uniform(0, 1, (h, w)), 0.0)
    nu = np.where(valid, rng.uniform(0, 1, (h, w)), 0.0)
    return frame, CoordinateMap(mu=mu, nu=nu, valid=valid)


def _single_pixel_patch(row=10, col=20, mu=0.7, nu=0.3):
    m = CoordinateMap(mu=np.zeros((64, 64)), nu=np.zeros((64, 64)),
                      valid=np.zeros((64, 64), dtype=bool))
    m.mu[row, col] = mu
    m.nu[row, col] = nu
    m.valid[row, col] = True
    return LabeledPatch(image=np.zeros((64, 64, 3), dtype=np.uint8), cmap=m)


class TestMakePatch:
    def test_centered_bbox_crop_arithmetic(self):
        frame, cmap = _frame_and_map()
        p = make_patch(frame, cmap, (900, 500, 1020, 580), frame_id="f0")
        assert p.image.shape == (64, 64, 3)
        assert p.cmap.mu.shape == (64, 64)
        # bbox center (960, 540) scales to (96, 54); 64x64 crop at (64, 22)
        assert p.provenance["crop_origin"] == [64, 22]
        assert p.provenance["frame_id"] == "f0"
        assert p.provenance["resized_to"] == [192, 108]

    def test_corner_bboxes_clamp_flush(self):
        frame, cmap = _frame_and_map()
        assert make_patch(frame, cmap, (0, 0, 10, 10)).provenance["crop_origin"] == [0, 0]
        far = make_patch(frame, cmap, (1910, 1070, 1920, 1080))
        assert far.provenance["crop_origin"] == [192 - 64, 108 - 44 - 20]

    def test_map_values_survive_exactly(self):
        frame, cmap = _frame_and_map()
        p = make_patch(frame, cmap, (800, 400, 1100, 700))
        kept = p.cmap.mu[p.cmap.valid]
        assert kept.size > 0
        assert np.isin(kept, cmap.mu[cmap.valid]).all()

    def test_rejects_bad_inputs(self):
        frame, cmap = _frame_and_map(h=270, w=480)
        with pytest.raises(SurfregError):
            make_patch(frame, cmap, (400, 100, 500, 200))      # bbox beyond frame
        with pytest.raises(SurfregError):
            make_patch(frame, cmap, (50, 50, 40, 60))          # empty bbox
        other = CoordinateMap(mu=np.zeros((271, 480)), nu=np.zeros((271, 480)),
                              valid=np.zeros((271, 480), dtype=bool))
        with pytest.raises(SurfregError):
            make_patch(frame, other, (0, 0, 10, 10))           # size mismatch
        with pytest.raises(SurfregError):
            make_patch(frame.astype(np.float64), cmap, (0, 0, 10, 10))

    def test_patch_invariant_checked(self):
        with pytest.raises(SurfregError):
            LabeledPatch(image=np.zeros((64, 64, 3), dtype=np.uint8),
                         cmap=CoordinateMap(mu=np.zeros((32, 32)), nu=np.zeros((32, 32)),
                                            valid=np.zeros((32, 32), dtype=bool)))


class TestTransformAndAugment:
    def test_flips_are_involutions(self):
        frame, cmap = _frame_and_map(seed=1)
        p = make_patch(frame, cmap, (800, 400, 1100, 700))
        for kw in ({"flip_h": True}, {"flip_v": True}):
            twice = transform_patch(transform_patch(p, **kw), **kw)
            assert np.array_equal(twice.image, p.image)
            assert np.array_equal(twice.cmap.mu, p.cmap.mu)
            assert np.array_equal(twice.cmap.nu, p.cmap.nu)
            assert np.array_equal(twice.cmap.valid, p.cmap.valid)

    def test_quarter_turn_permutes_pixels(self):
        p = _single_pixel_patch(row=10, col=20)
        r = transform_patch(p, rotation_deg=90.0)
        ys, xs = np.nonzero(r.cmap.valid)
        # counterclockwise in pixel axes about (31.5, 31.5): (x, y) -> (y, 63 - x)
        assert (ys.tolist(), xs.tolist()) == ([43], [10])
        assert r.cmap.mu[43, 10] == 0.7
        assert r.cmap.nu[43, 10] == 0.3

    def test_translation_moves_valid_pixels(self):
        p = _single_pixel_patch(row=30, col=30)
        t = transform_patch(p, translation_px=(5.0, -3.0))
        ys, xs = np.nonzero(t.cmap.valid)
        assert (ys.tolist(), xs.tolist()) == ([27], [35])
        assert t.cmap.mu[27, 35] == 0.7

    def test_out_of_support_pixels_become_invalid(self):
        p = _single_pixel_patch(row=1, col=1)
        t = transform_patch(p, translation_px=(-10.0, -10.0))
        assert not t.cmap.valid.any()
        assert not t.cmap.mu.any()

    def test_image_and_map_stay_in_lockstep(self):
        # paint the image white exactly on the valid set; any transform
        # must keep nearest-neighbor valid pixels on bright image pixels
        rng = np.random.default_rng(2)
        valid = rng.uniform(0, 1, (64, 64)) > 0.8
        img = np.repeat(np.where(valid, 255, 0).astype(np.uint8)[..., None], 3, axis=2)
        cm = CoordinateMap(mu=np.where(valid, 0.5, 0.0), nu=np.where(valid, 0.5, 0.0),
                           valid=valid)
        p = LabeledPatch(image=np.ascontiguousarray(img), cmap=cm)
        t = transform_patch(p, flip_h=True, rotation_deg=17.0, translation_px=(2.5, -1.5))
        ys, xs = np.nonzero(t.cmap.valid)
        assert len(ys) > 0
        # bilinear blur can dim edge pixels, never interior ones to zero
        assert np.mean(t.image[ys, xs, 0] > 64) > 0.9

    def test_augment_count_and_determinism(self):
        p = _single_pixel_patch()
        a = augment(p, AugmentSpec(), count=6, seed=9)
        b = augment(p, AugmentSpec(), count=6, seed=9)
        assert len(a) == len(b) == 6
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert np.array_equal(x.cmap.mu, y.cmap.mu)
            assert x.provenance["augment"] == y.provenance["augment"]
        c = augment(p, AugmentSpec(), count=6, seed=10)
        assert any(not np.array_equal(x.cmap.valid, y.cmap.valid) for x, y in zip(a, c))

    def test_thousandfold_expansion(self):
        p = _single_pixel_patch()
        assert len(augment(p, AugmentSpec(), count=1000, seed=0)) == 1000

    def test_parameters_recorded_in_provenance(self):
        p = _single_pixel_patch()
        spec = AugmentSpec(flips=("horizontal",), rotation_deg=5.0, translation_px=2.0)
        out = augment(p, spec, count=3, seed=1)
        for k, aug in enumerate(out):
            rec = aug.provenance["augment"]
            assert rec["index"] == k and rec["seed"] == 1
            assert abs(rec["rotation_deg"]) <= 5.0
            assert all(abs(v) <= 2.0 for v in rec["translation_px"])
            assert rec["flip_v"] is False

    def test_rejects_zero_count(self):
        with pytest.raises(SurfregError):
            augment(_single_pixel_patch(), AugmentSpec(), count=0, seed=0)


class TestOraclePredict:
    def _gt(self, seed=3, n=120):
        rng = np.random.default_rng(seed)
        return CoordinateMap(mu=rng.uniform(0.3, 0.7, (n, n)),
                             nu=rng.uniform(0.3, 0.7, (n, n)),
                             valid=np.ones((n, n), dtype=bool))

    def test_zero_magnitude_is_identity(self):
        gt = self._gt()
        for kind in ("gaussian", "dropout", "outlier"):
            out = oracle_predict(gt, NoiseModel(kind, 0.0, seed=5))
            assert np.array_equal(out.mu, gt.mu)
            assert np.array_equal(out.nu, gt.nu)
            assert np.array_equal(out.valid, gt.valid)

    def test_gaussian_noise_statistics(self):
        gt = self._gt()
        out = oracle_predict(gt, NoiseModel("gaussian", 0.05, seed=1))
        for chan in ("mu", "nu"):
            ratio = np.mean((getattr(out, chan) - getattr(gt, chan)) ** 2) / 0.05**2
            assert 0.9 < ratio < 1.1
        assert np.array_equal(out.valid, gt.valid)
        assert out.mu.min() >= 0.0 and out.mu.max() <= 1.0

    def test_dropout_fraction_and_total(self):
        gt = self._gt()
        out = oracle_predict(gt, NoiseModel("dropout", 0.25, seed=2))
        assert out.valid.sum() == gt.valid.sum() - round(0.25 * gt.valid.sum())
        assert not oracle_predict(gt, NoiseModel("dropout", 1.0, seed=2)).valid.any()
        # dropped pixels store zeros, like decoded maps do
        dropped = gt.valid & ~out.valid
        assert not out.mu[dropped].any()

    def test_outlier_fraction(self):
        gt = self._gt()
        out = oracle_predict(gt, NoiseModel("outlier", 0.25, seed=3))
        changed = (out.mu != gt.mu) | (out.nu != gt.nu)
        assert changed.sum() == round(0.25 * gt.valid.sum())
        assert np.array_equal(out.valid, gt.valid)

    def test_deterministic_by_seed(self):
        gt = self._gt()
        a = oracle_predict(gt, NoiseModel("gaussian", 0.1, seed=7))
        b = oracle_predict(gt, NoiseModel("gaussian", 0.1, seed=7))
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.nu, b.nu)

    def test_unknown_kind_rejected(self):
        with pytest.raises(SurfregError):
            oracle_predict(self._gt(), NoiseModel("salt", 0.1, seed=0))

    def test_negative_magnitude_rejected(self):
        with pytest.raises(SurfregError):
            NoiseModel("gaussian", -0.1, seed=0)


@pytest.fixture(scope="module")
def small_param():
    region, alpha, beta = landmark_patch(ni=41, nj=21)
    return region, parameterize(region, alpha, beta)


class TestSynthScene:
    CAM = CameraModel(width=480, height=270, focal=12_000.0)

    def test_generates_n_valid_samples_with_manifest(self, small_param, tmp_path):
        _, param = small_param
        samples = synth_scene(param, self.CAM, PoseSampler(seed=4), 5, tmp_path)
        assert len(samples) == 5
        assert all(cm.valid.any() for _, cm in samples)
        header, records = read_manifest(tmp_path / "manifest.jsonl")
        assert header["n"] == 5 and len(records) == 5
        assert header["camera"]["focal"] == 12_000.0
        for i, rec in enumerate(records):
            assert rec["index"] == i
            assert rec["seed"] == 4 ^ i
            stored = load_map(tmp_path / rec["map"])
            assert stored.valid.any()

    def test_manifest_bytes_are_deterministic(self, small_param, tmp_path):
        _, param = small_param
        digests = []
        for sub in ("a", "b"):
            synth_scene(param, self.CAM, PoseSampler(seed=4), 4, tmp_path / sub)
            data = (tmp_path / sub / "manifest.jsonl").read_bytes()
            map_bytes = b"".join((tmp_path / sub / f"maps/sample_{i:04d}.png").read_bytes()
                                 for i in range(4))
            digests.append(hashlib.sha256(data + map_bytes).hexdigest())
        assert digests[0] == digests[1]

    def test_empty_dataset_has_valid_manifest(self, small_param, tmp_path):
        _, param = small_param
        assert synth_scene(param, self.CAM, PoseSampler(seed=4), 0, tmp_path) == []
        header, records = read_manifest(tmp_path / "manifest.jsonl")
        assert header["n"] == 0 and records == []

    def test_split_labels_cycle(self, small_param, tmp_path):
        _, param = small_param
        synth_scene(param, self.CAM, PoseSampler(seed=4), 6, tmp_path, split_cycle=(2, 1))
        _, records = read_manifest(tmp_path / "manifest.jsonl")
        assert [r["split"] for r in records] == ["train", "train", "val"] * 2

    def test_impossible_sampler_errors_after_retries(self, small_param, tmp_path):
        _, param = small_param
        behind = PoseSampler(z_mm=(-500.0, -400.0), seed=0)
        with pytest.raises(BehindCameraError):
            synth_scene(param, self.CAM, behind, 1, tmp_path, retry_limit=5)

    def test_foreign_manifest_rejected(self, tmp_path):
        bad = tmp_path / "manifest.jsonl"
        bad.write_text('{"format": "something-else", "version": 9}\n')
        with pytest.raises(SurfregError):
            read_manifest(bad)
