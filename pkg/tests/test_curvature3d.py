import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microexp.curvature3d import (CurvatureConfig, DEFAULT_LANDMARK_SUBSET,
                                  DegenerateSurfaceError, PrincipalCurvatures,
                                  SurfaceType, estimate_principal_curvatures,
                                  gaussian_mean_curvature, hk_classify,
                                  landmark_local_histogram, load_landmark_subset,
                                  quantize_si, sequence_feature, shape_index)
from microexp.dataset import (NonObjectiveClass, ObjectiveClass, SampleData,
                              SampleRecord)
from microexp.preprocess2d import FrameVolume
from microexp.preprocess3d import PointCloudFrame
from microexp.synth import make_surface


def _record(onset=0, apex=0, offset=1):
    return SampleRecord("01", "s", onset, apex, offset, frozenset(),
                        ObjectiveClass.OTHERS, NonObjectiveClass.OTHERS)


class TestEstimate:
    def test_sphere_curvatures(self, sphere_cap, rng):
        pts = sphere_cap.cloud.points
        for i in rng.choice(len(pts), 25, replace=False):
            pc = estimate_principal_curvatures(sphere_cap.cloud, pts[i], 0.01)
            assert abs(abs(pc.p_min) - 20.0) < 2.0
            assert abs(abs(pc.p_max) - 20.0) < 2.0
            assert np.sign(pc.p_min) == np.sign(pc.p_max)

    def test_plane_curvatures(self, rng):
        plane = make_surface("plane", n_points=3000, seed=2)
        pts = plane.cloud.points
        for i in rng.choice(len(pts), 20, replace=False):
            pc = estimate_principal_curvatures(plane.cloud, pts[i], 0.012)
            assert abs(pc.p_min) <= 0.5 and abs(pc.p_max) <= 0.5

    def test_cylinder_curvatures(self, rng):
        cyl = make_surface("cylinder", {"radius": 0.05}, n_points=4000, seed=3)
        pts = cyl.cloud.points
        small, big = [], []
        for i in rng.choice(len(pts), 25, replace=False):
            pc = estimate_principal_curvatures(cyl.cloud, pts[i], 0.01)
            mags = sorted([abs(pc.p_min), abs(pc.p_max)])
            small.append(mags[0])
            big.append(mags[1])
        assert np.median(small) < 0.5
        assert abs(np.median(big) - 20.0) / 20.0 < 0.1

    def test_too_few_neighbors_rejected(self):
        cloud = PointCloudFrame(np.random.default_rng(0).standard_normal((30, 3)))
        with pytest.raises(ValueError, match="neighbors"):
            estimate_principal_curvatures(cloud, cloud.points[0], 1e-6)

    def test_collinear_neighborhood_rejected(self):
        t = np.linspace(0, 1, 40)
        line = np.column_stack([t, 2 * t, 0 * t]) * 0.01
        cloud = PointCloudFrame(line)
        with pytest.raises(DegenerateSurfaceError):
            estimate_principal_curvatures(cloud, line[20], 0.02)

    def test_invariants_on_type(self):
        with pytest.raises(ValueError):
            PrincipalCurvatures(2.0, 1.0)
        with pytest.raises(ValueError):
            PrincipalCurvatures(np.nan, 1.0)


class TestKH:
    def test_direct_values(self):
        assert gaussian_mean_curvature(PrincipalCurvatures(1, 1)) == (1, 1)
        assert gaussian_mean_curvature(PrincipalCurvatures(0, 0)) == (0, 0)
        assert gaussian_mean_curvature(PrincipalCurvatures(-1, 2)) == (-2, 0.5)

    def test_table_rows(self):
        assert hk_classify(1, 1) is SurfaceType.PEAK
        assert hk_classify(0, 0) is SurfaceType.FLAT
        assert hk_classify(-1, 0) is SurfaceType.MINIMAL_SURFACE

    def test_exhaustive_sign_grid(self):
        eps = 0.5
        grid = {(-1, -1): SurfaceType.SADDLE_VALLEY,
                (-1, 0): SurfaceType.MINIMAL_SURFACE,
                (-1, 1): SurfaceType.SADDLE_RIDGE,
                (0, -1): SurfaceType.VALLEY,
                (0, 0): SurfaceType.FLAT,
                (0, 1): SurfaceType.RIDGE,
                (1, -1): SurfaceType.PIT,
                (1, 0): SurfaceType.UNDEFINED,
                (1, 1): SurfaceType.PEAK}
        for (sk, sh), expected in grid.items():
            assert hk_classify(2.0 * sk, 2.0 * sh, eps) is expected
        assert len({v for v in grid.values()}) == 9

    def test_zero_eps_required(self):
        with pytest.raises(ValueError):
            hk_classify(1, 1, zero_eps=0)


class TestShapeIndex:
    def test_spot_values(self):
        assert shape_index(PrincipalCurvatures(-1, 1)) == pytest.approx(0.5, abs=1e-12)
        assert shape_index(PrincipalCurvatures(0, 1)) == pytest.approx(0.25, abs=1e-12)
        assert shape_index(PrincipalCurvatures(-1, 0)) == pytest.approx(0.75, abs=1e-12)

    def test_umbilic_conventions(self):
        assert shape_index(PrincipalCurvatures(1, 1)) == 0.0
        assert shape_index(PrincipalCurvatures(-1, -1)) == 1.0
        assert shape_index(PrincipalCurvatures(0, 0)) == 0.5

    @given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
    @settings(max_examples=200)
    def test_range_property(self, a, b):
        pc = PrincipalCurvatures(min(a, b), max(a, b))
        assert 0.0 <= shape_index(pc) <= 1.0


class TestQuantize:
    def test_nine_centers_map_to_bins(self):
        for i, center in enumerate(i / 8 for i in range(9)):
            assert quantize_si(center) == i

    def test_nearest_center(self):
        assert quantize_si(0.7) == 6
        assert quantize_si(0.06) == 0
        assert quantize_si(0.07) == 1

    def test_ties_round_toward_saddle(self):
        assert quantize_si(0.4375) == 4  # midpoint of bins 3 and 4
        assert quantize_si(0.5625) == 4  # midpoint of bins 4 and 5

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            quantize_si(1.2)
        with pytest.raises(ValueError):
            quantize_si(-0.01)


class TestLandmarkHistogram:
    def test_sphere_region_concentrated(self, sphere_cap):
        cfg = CurvatureConfig(neighborhood_radius=0.01, landmark_region_radius=0.015)
        center = sphere_cap.cloud.points.mean(axis=0)
        i = np.argmin(np.linalg.norm(sphere_cap.cloud.points - center, axis=1))
        hist = landmark_local_histogram(sphere_cap.cloud, sphere_cap.cloud.points[i],
                                        0.015, "si", cfg)
        assert hist.max() >= 0.9
        assert hist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_plane_region_flat(self):
        plane = make_surface("plane", n_points=3000, seed=2)
        cfg = CurvatureConfig(neighborhood_radius=0.012, zero_eps=1.0,
                              landmark_region_radius=0.015)
        lm = np.array([0.0, 0.0, 0.4])
        hist = landmark_local_histogram(plane.cloud, lm, 0.015, "hk", cfg)
        assert hist[SurfaceType.FLAT.value] >= 0.9
        assert hist.sum() == pytest.approx(1.0, abs=1e-9)

    def test_too_few_region_points(self, sphere_cap):
        cfg = CurvatureConfig()
        far = np.array([1.0, 1.0, 1.0])
        with pytest.raises(ValueError, match="region"):
            landmark_local_histogram(sphere_cap.cloud, far, 0.01, "si", cfg)

    def test_bad_kind(self, sphere_cap):
        with pytest.raises(ValueError):
            landmark_local_histogram(sphere_cap.cloud, sphere_cap.cloud.points[0],
                                     0.02, "xy", CurvatureConfig())


def _single_landmark_sample(sphere_cap):
    """Two-frame sample whose clouds are the sphere cap; landmark 0 sits at
    the cap center, the other 48 landmarks are copies (unused)."""
    center = sphere_cap.cloud.points.mean(axis=0)
    i = np.argmin(np.linalg.norm(sphere_cap.cloud.points - center, axis=1))
    lm = np.tile(sphere_cap.cloud.points[i], (49, 1))
    video = FrameVolume(np.zeros((2, 16, 16), dtype=np.uint8))
    return SampleData(video=video, clouds=(sphere_cap.cloud, sphere_cap.cloud),
                      landmarks2d=None, landmarks3d=(lm, lm.copy()), frame_rate=60.0)


class TestSequenceFeature:
    def test_identity_weight_single_landmark_single_frame(self, sphere_cap):
        sample = _single_landmark_sample(sphere_cap)
        cfg = CurvatureConfig(neighborhood_radius=0.01, landmark_region_radius=0.015)
        record = _record(onset=0, apex=0, offset=0)
        fv = sequence_feature(sample, record, [1.0], "si", cfg, frames="all", subset=(0,))
        raw = landmark_local_histogram(sample.clouds[0], sample.landmarks3d[0][0],
                                       cfg.landmark_region_radius, "si", cfg)
        assert np.allclose(fv.values, raw)
        assert fv.tag == "3d-si"

    def test_default_length_576(self, tiny_dataset):
        records, samples = tiny_dataset
        cfg = CurvatureConfig()
        fv = sequence_feature(samples[0], records[0], np.ones(32), "si", cfg)
        assert len(fv) == 32 * 2 * 9 == 576
        assert len(DEFAULT_LANDMARK_SUBSET) == 32

    def test_weight_scales_only_its_landmark(self, sphere_cap):
        sample = _single_landmark_sample(sphere_cap)
        cfg = CurvatureConfig(neighborhood_radius=0.01, landmark_region_radius=0.015)
        record = _record(onset=0, apex=1, offset=1)
        subset = (0, 1)
        base = sequence_feature(sample, record, [1.0, 1.0], "si", cfg, subset=subset)
        bumped = sequence_feature(sample, record, [2.0, 1.0], "si", cfg, subset=subset)
        assert np.allclose(bumped.values[:18], 2.0 * base.values[:18])
        assert np.array_equal(bumped.values[18:], base.values[18:])

    def test_sihk_concatenation(self, sphere_cap):
        sample = _single_landmark_sample(sphere_cap)
        cfg = CurvatureConfig(neighborhood_radius=0.01, landmark_region_radius=0.015)
        record = _record(onset=0, apex=1, offset=1)
        si = sequence_feature(sample, record, [1.0], "si", cfg, subset=(0,))
        hk = sequence_feature(sample, record, [1.0], "hk", cfg, subset=(0,))
        both = si.concat(hk, tag="3d-sihk")
        assert len(both) == len(si) + len(hk)
        assert np.array_equal(both.values, np.concatenate([si.values, hk.values]))

    def test_missing_frame_rejected(self, sphere_cap):
        sample = _single_landmark_sample(sphere_cap)
        cfg = CurvatureConfig(neighborhood_radius=0.01, landmark_region_radius=0.015)
        record = _record(onset=0, apex=5, offset=5)
        with pytest.raises(ValueError, match="frame"):
            sequence_feature(sample, record, [1.0], "si", cfg, subset=(0,))

    def test_weight_count_must_match_subset(self, sphere_cap):
        sample = _single_landmark_sample(sphere_cap)
        with pytest.raises(ValueError, match="weight"):
            sequence_feature(sample, _record(), [1.0, 2.0], "si",
                             CurvatureConfig(), subset=(0,))


class TestLandmarkSubsetFile:
    def test_one_index_per_line(self, tmp_path):
        path = tmp_path / "subset.txt"
        path.write_text("# brows\n0\n1\n 2 \n\n48\n", encoding="utf-8")
        assert load_landmark_subset(path) == (0, 1, 2, 48)

    def test_default_subset_round_trips(self, tmp_path):
        path = tmp_path / "subset.txt"
        path.write_text("\n".join(str(i) for i in DEFAULT_LANDMARK_SUBSET) + "\n")
        assert load_landmark_subset(path) == DEFAULT_LANDMARK_SUBSET

    def test_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "subset.txt"
        path.write_text("49\n")
        with pytest.raises(ValueError, match="outside"):
            load_landmark_subset(path)

    def test_non_integer_rejected(self, tmp_path):
        path = tmp_path / "subset.txt"
        path.write_text("brow\n")
        with pytest.raises(ValueError, match="integer"):
            load_landmark_subset(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "subset.txt"
        path.write_text("# nothing\n")
        with pytest.raises(ValueError, match="empty"):
            load_landmark_subset(path)


class TestRotationInvariance:
    def test_magnitudes_stable_under_rotation(self, sphere_cap, rng):
        from microexp.synth import _random_rotation

        pts = sphere_cap.cloud.points
        idx = rng.choice(len(pts), 20, replace=False)
        base = []
        for i in idx:
            pc = estimate_principal_curvatures(sphere_cap.cloud, pts[i], 0.01)
            base.append(sorted([abs(pc.p_min), abs(pc.p_max)]))
        base = np.array(base)

        rot = _random_rotation(np.random.default_rng(5))
        rotated = PointCloudFrame(pts @ rot.T)
        after = []
        for i in idx:
            pc = estimate_principal_curvatures(rotated, rotated.points[i], 0.01)
            after.append(sorted([abs(pc.p_min), abs(pc.p_max)]))
        after = np.array(after)
        rel = np.abs(after - base) / np.abs(base)
        assert np.median(rel) < 0.01
