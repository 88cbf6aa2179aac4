import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorapair.errors import ValidationError
from lorapair.scoring import (
    DensityFeatures,
    ScoreFusionWeights,
    area_weight,
    calibrate_threshold,
    decide,
    density_features,
    fuse_match_score,
    location_score,
    target_density,
)

unit = st.floats(0.0, 1.0)


class TestFeatures:
    def test_density_examples(self):
        assert target_density(np.eye(5), 0.9) == 1.0
        assert target_density(np.full((3, 4), 0.1), 0.5) == 0.0
        m = np.zeros((4, 4))
        m[0, 0] = m[1, 1] = 0.9
        assert target_density(m, 0.5) == 0.5

    def test_density_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            m = rng.uniform(-1, 1, size=tuple(rng.integers(1, 9, size=2)))
            hits = sum(any(m[i, j] > 0.3 for j in range(m.shape[1])) for i in range(m.shape[0]))
            hits += sum(any(m[i, j] > 0.3 for i in range(m.shape[0])) for j in range(m.shape[1]))
            assert target_density(m, 0.3) == hits / sum(m.shape)

    def test_area_weight(self):
        assert area_weight(8, 8) == 1.0
        assert area_weight(4, 8) == 0.5
        assert area_weight(1, 32) == 0.03125
        with pytest.raises(ValidationError):
            area_weight(0, 3)

    def test_location_score(self):
        assert location_score(np.eye(6)) == pytest.approx(1.0, abs=1e-9)
        assert location_score(np.zeros((2, 3))) == 0.0
        assert location_score([[0.9, 0.1], [0.2, 0.8]]) == pytest.approx(0.85, abs=1e-12)

    def test_empty_matrix(self):
        with pytest.raises(ValidationError):
            density_features(np.zeros((0, 3)))

    def test_bundle(self):
        f = density_features(np.eye(4)[:, :2], 0.5)
        assert (f.w_s, f.d_j) == (0.5, 4 / 6)


class TestFusion:
    def test_hand_example(self):
        s = fuse_match_score(0.8, DensityFeatures(1.0, 0.5, 0.6), ScoreFusionWeights(0.5, 0.2))
        assert s == pytest.approx(0.72, abs=1e-12)

    def test_collapse_to_classifier(self):
        assert fuse_match_score(0.37, DensityFeatures(1.0, 0.2, -0.4), ScoreFusionWeights(1.0, 0.0)) == 0.37

    def test_annihilated(self):
        assert fuse_match_score(0.9, DensityFeatures(0.5, 0.0, 0.7), ScoreFusionWeights(0.0, 0.0)) == 0.0

    @pytest.mark.parametrize("kw", [{"alpha_mix": 1.5}, {"beta_loc": -0.1}])
    def test_weight_ranges(self, kw):
        with pytest.raises(ValidationError):
            ScoreFusionWeights(**kw)

    @pytest.mark.parametrize("args", [(0.0, 0.5, 0.0), (0.5, 1.2, 0.0), (0.5, 0.5, 1.5)])
    def test_feature_ranges(self, args):
        with pytest.raises(ValidationError):
            DensityFeatures(*args)

    def test_score_range(self):
        with pytest.raises(ValidationError):
            fuse_match_score(1.1, DensityFeatures(1.0, 1.0, 1.0), ScoreFusionWeights())

    @settings(max_examples=200, deadline=None)
    @given(unit, st.floats(0.01, 1.0), unit, st.floats(-1.0, 1.0), unit, st.floats(0.0, 5.0))
    def test_matches_direct_evaluation(self, s_cls, w_s, d_j, s_loc, a, b):
        got = fuse_match_score(s_cls, DensityFeatures(w_s, d_j, s_loc), ScoreFusionWeights(a, b))
        assert abs(got - ((a * w_s + (1 - a) * d_j) * s_cls + b * s_loc)) < 1e-12

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 1.0), unit, st.floats(-1.0, 1.0), unit, st.floats(0.0, 5.0), unit, unit)
    def test_monotone_in_classifier_score(self, w_s, d_j, s_loc, a, b, s1, s2):
        f, w = DensityFeatures(w_s, d_j, s_loc), ScoreFusionWeights(a, b)
        lo, hi = sorted((s1, s2))
        assert fuse_match_score(lo, f, w) <= fuse_match_score(hi, f, w)

    def test_collapse_preserves_ranking(self):
        rng = np.random.default_rng(3)
        s = rng.uniform(size=200)
        w = ScoreFusionWeights(1.0, 0.0)
        fused = [fuse_match_score(x, DensityFeatures(1.0, rng.uniform(), rng.uniform(-1, 1)), w) for x in s]
        assert np.array_equal(np.argsort(fused, kind="stable"), np.argsort(s, kind="stable"))

    def test_features_symmetric_under_swap(self):
        m = np.random.default_rng(4).uniform(-1, 1, size=(3, 7))
        assert density_features(m, 0.2) == density_features(m.T, 0.2)


class TestDecision:
    def test_boundary_inclusive(self):
        assert decide(0.6, 0.6) == 1
        assert decide(0.59, 0.6) == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_calibration_beats_fine_sweep(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.integers(0, 2, size=80)
        s = np.round(np.clip(0.3 * y + rng.uniform(0, 0.8, size=80), 0, 1.1), 3)
        t = calibrate_threshold(s, y)
        acc = lambda th: np.mean((s >= th).astype(int) == y)
        sweep = max(acc(th) for th in np.arange(-0.001, 1.102, 0.001))
        assert acc(t) >= sweep
        # lowest threshold among the optimal candidates
        assert all(acc(c) < acc(t) for c in np.unique(s) if c < t)

    def test_all_negative(self):
        t = calibrate_threshold([0.2, 0.4], [0, 0])
        assert decide(0.4, t) == 0

    def test_calibration_errors(self):
        with pytest.raises(ValidationError):
            calibrate_threshold([], [])
        with pytest.raises(ValidationError):
            calibrate_threshold([0.1, 0.2], [1])


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.01, 1.0), unit, st.floats(-1.0, 1.0), unit, st.floats(0.0, 5.0),
       st.sampled_from(["w_s", "d_j", "s_loc"]), st.floats(0.0, 1.0))
def test_monotone_in_every_feature(s_cls, w_s, d_j, s_loc, a, b, which, t):
    base = {"w_s": w_s, "d_j": d_j, "s_loc": s_loc}
    hi = {**base, which: base[which] + t * (1.0 - base[which])}
    w = ScoreFusionWeights(a, b)
    assert fuse_match_score(s_cls, DensityFeatures(**base), w) <= fuse_match_score(s_cls, DensityFeatures(**hi), w)


def test_feature_ranges_on_random_matrices():
    rng = np.random.default_rng(10)
    for _ in range(10_000):
        m = rng.uniform(-1, 1, size=tuple(rng.integers(1, 9, size=2)))
        f = density_features(m, float(rng.uniform(-0.99, 0.99)))
        assert 0 < f.w_s <= 1 and 0 <= f.d_j <= 1 and -1 <= f.s_loc <= 1
        assert target_density(m) == target_density(m.T) and location_score(m) == location_score(m.T)
