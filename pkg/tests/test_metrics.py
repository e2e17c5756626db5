"""Pose error metrics, map losses, and distribution summaries.

The SSIM oracle is a naive per-window double loop written directly from
the definition; rotation oracles come from scipy's axis-angle
construction.
"""

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from surfreg.camera import CameraModel, Pose
from surfreg.errors import SurfregError
from surfreg.metrics import (
    ErrorSummary,
    PoseErrorReport,
    bce,
    combined_loss,
    map_losses,
    mse,
    pose_error,
    rotation_error,
    ssim,
    summarize,
    translation_error,
    write_error_csv,
    write_summary_csv,
)
from surfreg.raster import CoordinateMap

CAM = CameraModel(width=1920, height=1080, focal=50_000.0)


def _rot(axis, degrees):
    return Rotation.from_rotvec(np.radians(degrees) * np.asarray(axis, float)).as_matrix()


class TestRotationError:
    def test_identical_rotations(self):
        r = _rot([0, 0, 1], 17.0)
        assert rotation_error(r, r) == 0.0

    def test_thirty_degrees_about_z(self):
        r1 = _rot([1, 0, 0], 40.0)
        r2 = r1 @ _rot([0, 0, 1], 30.0)
        assert rotation_error(r1, r2) == pytest.approx(30.0, abs=1e-9)

    def test_maximal_distance(self):
        r1 = np.eye(3)
        r2 = _rot([1, 0, 0], 180.0)
        assert rotation_error(r1, r2) == pytest.approx(180.0, abs=1e-6)

    def test_symmetry_and_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            r1 = Rotation.random(random_state=rng).as_matrix()
            r2 = Rotation.random(random_state=rng).as_matrix()
            e = rotation_error(r1, r2)
            assert 0.0 <= e <= 180.0
            assert e == pytest.approx(rotation_error(r2, r1), abs=1e-12)

    def test_left_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            r1 = Rotation.random(random_state=rng).as_matrix()
            r2 = Rotation.random(random_state=rng).as_matrix()
            q = Rotation.random(random_state=rng).as_matrix()
            assert rotation_error(q @ r1, q @ r2) == pytest.approx(
                rotation_error(r1, r2), abs=1e-9)

    def test_zero_only_for_equal_rotations(self):
        r1 = np.eye(3)
        r2 = _rot([0, 1, 0], 0.01)
        assert rotation_error(r1, r2) > 1e-3

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(SurfregError):
            rotation_error(bad, np.eye(3))


class TestTranslationError:
    def test_identical(self):
        t = np.array([1.0, 2.0, 3.0])
        assert translation_error(t, t, CAM) == (0.0, 0.0, 0.0)

    def test_axis_conventions(self):
        ex, ey, ez = translation_error([0.0, 0.0, 0.0], [2.0, 3.0, 275.0], CAM)
        assert (ex, ey) == (2.0, 3.0)
        assert ez == pytest.approx(0.55, abs=1e-12)

    def test_depth_error_scales_with_focal(self):
        _, _, ez = translation_error([0, 0, 500.0], [0, 0, 0.0], CAM)
        assert ez == pytest.approx(1.0, abs=1e-12)
        half = CameraModel(width=1920, height=1080, focal=25_000.0)
        assert translation_error([0, 0, 500.0], [0, 0, 0.0], half)[2] == pytest.approx(2.0)

    def test_pose_error_report_bundles_both(self):
        a = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        b = Pose(_rot([0, 0, 1], 30.0), np.array([2.0, -3.0, 1275.0]))
        rep = pose_error("s0", a, b, CAM)
        assert rep.sample_id == "s0"
        assert rep.rot_deg == pytest.approx(30.0, abs=1e-9)
        assert (rep.ex_mm, rep.ey_mm) == (2.0, 3.0)
        assert rep.ez_pct == pytest.approx(0.55)

    def test_report_invariants(self):
        with pytest.raises(SurfregError):
            PoseErrorReport("s", 181.0, 0.0, 0.0, 0.0)
        with pytest.raises(SurfregError):
            PoseErrorReport("s", 10.0, -1.0, 0.0, 0.0)


class TestBce:
    def test_matched_half_is_ln_two(self):
        half = np.full((4, 4), 0.5)
        assert bce(half, half) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_confident_correct_prediction_is_near_zero(self):
        ones = np.ones((4, 4))
        assert bce(ones, ones) < 1e-6

    def test_minimized_when_prediction_matches_target(self):
        rho = np.full((8, 8), 0.3)
        grid = np.linspace(0.01, 0.99, 99)
        vals = [bce(rho, np.full((8, 8), g)) for g in grid]
        assert grid[int(np.argmin(vals))] == pytest.approx(0.3, abs=0.011)

    def test_rejects_shape_mismatch_and_bad_range(self):
        with pytest.raises(SurfregError):
            bce(np.zeros((2, 2)), np.zeros((2, 3)))
        with pytest.raises(SurfregError):
            bce(np.full((2, 2), 1.5), np.full((2, 2), 0.5))

    def test_nonnegative(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(0, 1, (2, 9, 9))
        assert bce(a, b) >= 0.0


class TestMse:
    def test_zero_iff_equal(self):
        a = np.random.default_rng(3).uniform(0, 1, (6, 6))
        assert mse(a, a) == 0.0
        assert mse(a, a + 0.01) > 0.0

    def test_constant_offset(self):
        assert mse(np.zeros((5, 5)), np.full((5, 5), 0.5)) == pytest.approx(0.25)

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a, b = rng.uniform(0, 1, (2, 7, 7))
        assert mse(a, b) == mse(b, a)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(SurfregError):
            mse(np.zeros((2, 2)), np.zeros(4))


def _naive_ssim(r, s, w=7, c1=1e-4, c2=9e-4, c3=4.5e-4):
    vals = []
    for i in range(r.shape[0] - w + 1):
        for j in range(r.shape[1] - w + 1):
            pr = r[i:i + w, j:j + w].ravel()
            ps = s[i:i + w, j:j + w].ravel()
            m1, m2 = pr.mean(), ps.mean()
            v1, v2 = pr.var(), ps.var()
            cov = ((pr - m1) * (ps - m2)).mean()
            lum = (2 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1)
            con = (2 * np.sqrt(v1 * v2) + c2) / (v1 + v2 + c2)
            stru = (cov + c3) / (np.sqrt(v1 * v2) + c3)
            vals.append(lum * con * stru)
    return float(np.mean(vals))


class TestSsim:
    def test_self_similarity(self):
        a = np.random.default_rng(5).uniform(0, 1, (20, 24))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_constant_images_closed_form(self):
        v = ssim(np.zeros((16, 16)), np.ones((16, 16)))
        assert v == pytest.approx(1e-4 / (1 + 1e-4), abs=1e-12)

    def test_matches_naive_window_loop(self):
        rng = np.random.default_rng(6)
        a = rng.uniform(0, 1, (15, 18))
        b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(_naive_ssim(a, b), abs=1e-12)

    def test_symmetry_at_unit_exponents(self):
        rng = np.random.default_rng(7)
        a, b = rng.uniform(0, 1, (2, 12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_bounded_for_defaults(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            a, b = rng.uniform(0, 1, (2, 10, 10))
            assert -1.0 <= ssim(a, b) <= 1.0

    def test_rejects_bad_window_and_constants(self):
        a = np.zeros((5, 5))
        with pytest.raises(SurfregError):
            ssim(a, a, window=6)
        with pytest.raises(SurfregError):
            ssim(a, a, c1=0.0)
        with pytest.raises(SurfregError):
            ssim(a, np.zeros((5, 6)))


class TestCombinedLoss:
    def test_zero_for_matched_binary_maps(self):
        a = np.zeros((10, 10))
        a[3:7, 2:8] = 1.0
        assert combined_loss(a, a) == pytest.approx(0.0, abs=1e-6)

    def test_equals_component_combination(self):
        rng = np.random.default_rng(9)
        a, b = rng.uniform(0, 1, (2, 14, 14))
        expected = (bce(a, b) + mse(a, b) + (1.0 - ssim(a, b))) / 3.0
        assert combined_loss(a, b) == pytest.approx(expected, abs=1e-15)

    def test_monotone_as_constant_maps_separate(self):
        rho = np.full((16, 16), 0.5)
        vals = [combined_loss(rho, np.full((16, 16), 0.5 + d))
                for d in np.linspace(0.0, 0.4, 9)]
        assert np.all(np.diff(vals) > 0)


class TestMapLosses:
    def _map(self, mu, nu, valid):
        return CoordinateMap(mu=np.asarray(mu, float), nu=np.asarray(nu, float),
                             valid=np.asarray(valid, bool))

    def test_components_match_direct_calls_on_union(self):
        rng = np.random.default_rng(10)
        shape = (12, 12)
        valid_p = rng.uniform(0, 1, shape) > 0.3
        valid_t = rng.uniform(0, 1, shape) > 0.3
        mu_p, nu_p, mu_t, nu_t = rng.uniform(0, 1, (4, *shape))
        pred = self._map(np.where(valid_p, mu_p, 0), np.where(valid_p, nu_p, 0), valid_p)
        truth = self._map(np.where(valid_t, mu_t, 0), np.where(valid_t, nu_t, 0), valid_t)
        out = map_losses(pred, truth)
        union = valid_p | valid_t
        exp_bce = (bce(truth.mu[union], pred.mu[union])
                   + bce(truth.nu[union], pred.nu[union])) / 2.0
        exp_mse = (mse(truth.mu[union], pred.mu[union])
                   + mse(truth.nu[union], pred.nu[union])) / 2.0
        exp_ssim = (ssim(truth.mu, pred.mu) + ssim(truth.nu, pred.nu)) / 2.0
        assert out["bce"] == pytest.approx(exp_bce, abs=1e-12)
        assert out["mse"] == pytest.approx(exp_mse, abs=1e-12)
        assert out["ssim"] == pytest.approx(exp_ssim, abs=1e-12)
        assert out["combined"] == pytest.approx(
            (exp_bce + exp_mse + (1 - exp_ssim)) / 3.0, abs=1e-12)
        assert out["metadata"]["pixel_set"] == "union-of-valid"
        assert out["metadata"]["channels"] == ["mu", "nu"]

    def test_identical_maps_have_zero_mse_unit_ssim(self):
        rng = np.random.default_rng(11)
        shape = (10, 10)
        valid = rng.uniform(0, 1, shape) > 0.2
        m = self._map(np.where(valid, rng.uniform(0, 1, shape), 0),
                      np.where(valid, rng.uniform(0, 1, shape), 0), valid)
        out = map_losses(m, m)
        assert out["mse"] == 0.0
        assert out["ssim"] == pytest.approx(1.0, abs=1e-9)

    def test_rejects_empty_and_mismatched(self):
        empty = self._map(np.zeros((4, 4)), np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(SurfregError):
            map_losses(empty, empty)
        with pytest.raises(SurfregError):
            map_losses(empty, self._map(np.zeros((4, 5)), np.zeros((4, 5)),
                                        np.ones((4, 5))))


class TestSummaries:
    def _reports(self, rot_values):
        return [PoseErrorReport(f"s{i}", v, v / 10.0, v / 20.0, v / 100.0)
                for i, v in enumerate(rot_values)]

    def test_single_report_collapses(self):
        s = summarize(self._reports([12.0]))["rot_deg"]
        assert s.minimum == s.q1 == s.median == s.q3 == s.maximum == 12.0
        assert s.mean == 12.0 and s.count == 1

    def test_linear_interpolation_quartiles(self):
        s = summarize(self._reports([1.0, 2.0, 3.0, 4.0, 5.0]))["rot_deg"]
        assert (s.q1, s.median, s.q3) == (2.0, 3.0, 4.0)
        assert (s.minimum, s.maximum, s.mean) == (1.0, 5.0, 3.0)

    def test_empty_rejected(self):
        with pytest.raises(SurfregError):
            summarize([])

    def test_summary_invariant_enforced(self):
        with pytest.raises(SurfregError):
            ErrorSummary(minimum=1.0, q1=0.5, median=2.0, q3=3.0, maximum=4.0,
                         mean=2.0, count=3)
        with pytest.raises(SurfregError):
            ErrorSummary(minimum=1.0, q1=1.0, median=1.0, q3=1.0, maximum=1.0,
                         mean=1.0, count=0)

    @given(st.lists(st.floats(min_value=0.0, max_value=180.0), min_size=1, max_size=40))
    @settings(max_examples=60, deadline=None)
    def test_order_statistics_sorted(self, values):
        s = summarize(self._reports(values))["rot_deg"]
        assert s.minimum <= s.q1 <= s.median <= s.q3 <= s.maximum
        assert s.minimum <= s.mean <= s.maximum
        assert s.count == len(values)

    def test_error_csv_round_trip(self, tmp_path):
        reports = self._reports([1.5, 2.25, 30.125])
        path = tmp_path / "errors.csv"
        write_error_csv(path, reports)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sample_id", "rot_deg", "ex_mm", "ey_mm", "ez_pct"]
        assert len(rows) == 4
        for row, rep in zip(rows[1:], reports):
            assert row[0] == rep.sample_id
            assert float(row[1]) == rep.rot_deg
            assert float(row[4]) == rep.ez_pct

    def test_summary_csv_layout(self, tmp_path):
        summaries = summarize(self._reports([1.0, 2.0, 3.0]))
        path = tmp_path / "summary.csv"
        write_summary_csv(path, summaries)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["metric", "min", "q1", "median", "q3", "max", "mean", "count"]
        assert [r[0] for r in rows[1:]] == ["rot_deg", "ex_mm", "ey_mm", "ez_pct"]
        assert float(rows[1][2]) == 1.5  # rot q1 of 1,2,3
