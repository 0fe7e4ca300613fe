import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nightburst.errors import InputError
from nightburst.motion_metering import (
    CapturePlan,
    ExposureSchedule,
    Gmm,
    MeteringParams,
    MotionField,
    MotionSample,
    bounded_flow,
    center_weights,
    detect_stability,
    fir_filter_predict,
    fir_taps,
    fit_gmm,
    mean_filter_predict,
    plan_capture,
    predict_min_motion,
    refine_field,
    weighted_average,
)
from nightburst.raw_model import GyroTrace, LinearImage, NoiseModel

QUIET = NoiseModel(slope=0.0, intercept=1e-12)


def ramp_image(w=256, h=192, slope=0.002, shift=0.0):
    x = np.arange(w, dtype=np.float64) - shift
    return LinearImage(np.tile(slope * x, (h, 1)))


class TestBoundedFlow:
    def test_identical_frames_give_zero(self):
        img = ramp_image()
        field = bounded_flow(img, img, QUIET)
        assert field.valid.any()
        assert np.all(field.magnitudes[field.valid] == 0.0)

    def test_gradient_parallel_ramp_is_tight(self):
        # Linear ramp shifted 2 px along its own gradient: the lower bound
        # reaches equality, so unmasked magnitudes should all be 2.
        prev = ramp_image(shift=0.0)
        curr = ramp_image(shift=2.0)
        field = bounded_flow(prev, curr, QUIET)
        mags = field.magnitudes[field.valid]
        assert mags.size > 0
        assert np.allclose(mags, 2.0, atol=1e-3)

    def test_noise_mask_rejects_pure_noise(self):
        # Flat signal + noise matching the model: at K=2.5 the gradient-norm
        # threshold should mask essentially every pixel.
        rng = np.random.default_rng(0)
        sigma = 0.01
        noise = NoiseModel(slope=0.0, intercept=sigma ** 2)
        base = np.full((128, 128), 0.25)
        prev = LinearImage(base + rng.normal(0, sigma, base.shape))
        curr = LinearImage(base + rng.normal(0, sigma, base.shape))
        field = bounded_flow(prev, curr, noise)
        assert field.valid.mean() < 0.01

    def test_size_mismatch_rejected(self):
        with pytest.raises(InputError):
            bounded_flow(ramp_image(128, 96), ramp_image(256, 192), QUIET)


class TestRefineField:
    def test_ninetieth_percentile_nearest_rank(self):
        # One bin per output cell holding 1..10: nearest-rank 90th = 9.
        mags = np.tile(np.arange(1.0, 11.0), (12, 16))
        field = MotionField(mags, np.ones_like(mags, dtype=bool))
        refined = refine_field(field)
        assert refined.magnitudes.shape == (12, 16)
        assert np.all(refined.magnitudes == 9.0)

    def test_all_masked_bin_is_invalid(self):
        mags = np.ones((24, 32))
        valid = np.ones_like(mags, dtype=bool)
        valid[0:2, 0:2] = False  # first bin fully masked
        refined = refine_field(MotionField(mags, valid))
        assert not refined.valid[0, 0]
        assert refined.valid[5, 5]

    def test_constant_field(self):
        mags = np.full((48, 64), 3.0)
        refined = refine_field(MotionField(mags, np.ones_like(mags, bool)))
        assert np.all(refined.magnitudes == 3.0)
        assert refined.valid.all()

    def test_matches_bruteforce_sort_oracle(self):
        rng = np.random.default_rng(5)
        mags = rng.random((36, 48)) * 7
        valid = rng.random((36, 48)) > 0.3
        refined = refine_field(MotionField(mags, valid))
        row_edges = np.linspace(0, 36, 13).astype(int)
        col_edges = np.linspace(0, 48, 17).astype(int)
        for i in range(12):
            for j in range(16):
                vals = mags[row_edges[i]:row_edges[i + 1],
                            col_edges[j]:col_edges[j + 1]]
                ok = valid[row_edges[i]:row_edges[i + 1],
                           col_edges[j]:col_edges[j + 1]]
                vals = np.sort(vals[ok])
                if vals.size == 0:
                    assert not refined.valid[i, j]
                else:
                    rank = math.ceil(0.9 * vals.size)
                    assert refined.magnitudes[i, j] == vals[rank - 1]


class TestWeightedAverage:
    def test_uniform_weights_average(self):
        mags = np.zeros((12, 16))
        mags[:, :8] = 2.0
        mags[:, 8:] = 4.0
        field = MotionField(mags, np.ones_like(mags, bool))
        s = weighted_average(field, np.ones_like(mags))
        assert s.value == pytest.approx(3.0)

    def test_single_bin_weight(self):
        mags = np.arange(12 * 16, dtype=float).reshape(12, 16)
        weights = np.zeros_like(mags)
        weights[3, 7] = 1.0
        field = MotionField(mags, np.ones_like(mags, bool))
        assert weighted_average(field, weights).value == mags[3, 7]

    def test_center_map_matches_dot_product_oracle(self):
        rng = np.random.default_rng(9)
        mags = rng.random((12, 16)) * 5
        valid = rng.random((12, 16)) > 0.2
        field = MotionField(mags, valid)
        got = weighted_average(field).value
        w = center_weights(12, 16) * valid
        want = float((w * mags).sum() / w.sum())
        assert got == pytest.approx(want, abs=1e-9)

    def test_all_zero_weights_rejected(self):
        field = MotionField(np.ones((12, 16)), np.ones((12, 16), bool))
        with pytest.raises(InputError, match="all zero"):
            weighted_average(field, np.zeros((12, 16)))

    def test_no_valid_bins_flags_no_signal(self):
        field = MotionField(np.ones((12, 16)), np.zeros((12, 16), bool))
        s = weighted_average(field)
        assert s.no_signal and s.value == 0.0


class TestFitGmm:
    def test_point_mass(self):
        gmm = fit_gmm([4.0] * 20)
        assert np.allclose(gmm.means, 4.0, atol=1e-6)
        assert np.allclose(gmm.variances, 0.05 ** 2)

    def test_single_gaussian_recovered(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(5.0, 1.0, size=1000)
        gmm = fit_gmm(samples)
        assert gmm.mean() == pytest.approx(5.0, abs=0.15)
        assert gmm.variance() == pytest.approx(1.0, abs=0.2)

    def test_bimodal_clusters_found(self):
        rng = np.random.default_rng(2)
        samples = np.concatenate([
            rng.normal(1.0, 0.1, 500), rng.normal(8.0, 0.1, 500)])
        gmm = fit_gmm(rng.permutation(samples))
        dominant = np.sort(gmm.means[np.argsort(gmm.weights)[-2:]])
        assert abs(dominant[0] - 1.0) < 0.1
        assert abs(dominant[1] - 8.0) < 0.1

    def test_accepts_motion_samples_and_pads_short_input(self):
        gmm = fit_gmm([MotionSample(2.0)])
        assert gmm.mean() == pytest.approx(2.0, abs=1e-6)


def mc_min_quantile(gmm, k, p, trials=400_000, seed=0):
    rng = np.random.default_rng(seed)
    draws = gmm.sample(trials * k, rng).reshape(trials, k)
    return float(np.quantile(draws.min(axis=1), p))


class TestPredictMinMotion:
    def test_point_mass_lands_at_the_mass(self):
        gmm = Gmm(np.array([1.0, 0.0, 0.0]), np.array([4.0, 4.0, 4.0]),
                  np.array([1e-12, 1e-12, 1e-12]))
        for k in (1, 2, 4, 8):
            assert predict_min_motion(gmm, k, 0.9) == pytest.approx(4.0, abs=1e-3)

    def test_k1_matches_monte_carlo(self):
        gmm = Gmm(np.array([1.0, 0.0, 0.0]), np.array([5.0, 5.0, 5.0]),
                  np.array([1.0, 1.0, 1.0]))
        got = predict_min_motion(gmm, 1, 0.9)
        want = mc_min_quantile(gmm, 1, 0.9)
        assert got == pytest.approx(want, rel=0.02)

    def test_k4_bimodal_matches_monte_carlo(self):
        gmm = Gmm(np.array([0.5, 0.5, 0.0]), np.array([1.0, 8.0, 4.0]),
                  np.array([0.09, 0.09, 0.09]))
        got = predict_min_motion(gmm, 4, 0.9)
        want = mc_min_quantile(gmm, 4, 0.9)
        assert got == pytest.approx(want, rel=0.02)

    def test_monotone_in_k_and_confidence(self):
        gmm = Gmm(np.array([0.6, 0.3, 0.1]), np.array([2.0, 5.0, 9.0]),
                  np.array([0.5, 1.0, 2.0]))
        vs = [predict_min_motion(gmm, k, 0.9) for k in (1, 2, 4, 8)]
        assert all(a >= b - 1e-3 for a, b in zip(vs, vs[1:]))
        ps = [predict_min_motion(gmm, 4, p) for p in (0.8, 0.9, 0.95)]
        assert all(b >= a - 1e-3 for a, b in zip(ps, ps[1:]))


def trace(times, speeds):
    # speeds along x only; norm equals |speed|
    arr = np.stack([times, speeds, np.zeros_like(times), np.zeros_like(times)], 1)
    return GyroTrace(arr)


class TestDetectStability:
    def test_all_zero_trace_is_stable(self):
        t = np.linspace(0, 3, 300)
        res = detect_stability(trace(t, np.zeros_like(t)), shutter_time=3.0)
        assert res.stabilized and res.avg_speed == 0.0

    def test_shutter_press_spike_is_masked(self):
        # Quiet before, large spike within the masked 0.4 s window.
        t = np.linspace(0, 3, 3000)
        speeds = np.where(t > 2.7, 0.5, 0.001)
        res = detect_stability(trace(t, speeds), shutter_time=3.0)
        assert res.stabilized
        # Windowed-mean oracle over [3-1.466, 3-0.4]
        sel = (t >= 3 - 1.466) & (t <= 3 - 0.4)
        assert res.avg_speed == pytest.approx(float(np.abs(speeds[sel]).mean()))

    def test_handheld_tremor_detected(self):
        t = np.linspace(0, 3, 300)
        res = detect_stability(trace(t, np.full_like(t, 0.05)), shutter_time=3.0)
        assert not res.stabilized

    def test_empty_trace_is_handheld(self):
        res = detect_stability(None)
        assert not res.stabilized and not res.sufficient_coverage


class TestPlanCapture:
    def test_stabilized_deep_dark_six_by_one_second(self):
        t = np.linspace(0, 3, 300)
        gyro = trace(t, np.zeros_like(t))
        plan = plan_capture(None, gyro, target_sensitivity=50.0)
        assert plan.exposure_time == pytest.approx(1.0)
        assert plan.frame_count == 6
        assert plan.stabilized

    def test_handheld_deep_dark_thirteen_by_333ms(self):
        plan = plan_capture(None, None, target_sensitivity=50.0)
        assert plan.exposure_time == pytest.approx(0.333)
        assert plan.frame_count == 13
        assert not plan.stabilized

    def test_bright_scene_keeps_unit_gain(self):
        plan = plan_capture(None, None, target_sensitivity=0.01)
        assert plan.gain == 1.0
        assert plan.exposure_time == pytest.approx(0.01)

    def test_blur_limiting_exposure(self):
        # v_min ~4 px/frame at 30 fps with B=3 px: t_blur = 3/4 / 30 = 25 ms.
        gmm = Gmm(np.array([1.0, 0.0, 0.0]), np.array([4.0, 4.0, 4.0]),
                  np.array([1e-9, 1e-9, 1e-9]))
        plan = plan_capture(gmm, None, target_sensitivity=0.5)
        t_blur = (3.0 / plan.predicted_v_min) / 30.0
        assert plan.exposure_time == pytest.approx(t_blur, rel=1e-3)
        assert plan.exposure_time * plan.gain == pytest.approx(0.5, rel=1e-6)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1e-4, 500.0))
    def test_sensitivity_conserved_unless_clamped(self, target):
        schedule = ExposureSchedule(blur_limited_exposure=0.05,
                                    stability_cap=0.333, gain_max=96.0)
        t_exp, gain, clamped = schedule.split(target)
        assert 1.0 <= gain <= 96.0
        assert t_exp <= 0.333 + 1e-12
        if not clamped:
            assert t_exp * gain == pytest.approx(target, rel=1e-9)
        else:
            assert t_exp * gain < target


class TestBaselineFilters:
    def test_fir_taps_are_normalized(self):
        taps = fir_taps()
        assert len(taps) == 8
        assert taps.sum() == pytest.approx(1.0)

    def test_filters_pass_constants(self):
        series = [3.0] * 12
        assert mean_filter_predict(series) == pytest.approx(3.0)
        assert fir_filter_predict(series) == pytest.approx(3.0)

    def test_mean_filter_uses_last_five(self):
        series = [100.0] * 5 + [2.0] * 5
        assert mean_filter_predict(series) == pytest.approx(2.0)
