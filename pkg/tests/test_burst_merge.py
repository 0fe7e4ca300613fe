import numpy as np
import pytest

from nightburst.burst_align import align_burst
from nightburst.burst_merge import (
    MergedRaw,
    MergeParams,
    merge_fourier,
    mismatch_maps,
    scene_noise_level,
    spatial_denoise,
    strength_factor,
)
from nightburst.raw_model import NoiseModel
from nightburst.synth_oracle import average_merge_oracle

from test_burst_align import texture_mosaic

DARK_TABLE = ((0.01, 1.0), (0.08, 8.0))


def make_burst(n, sigma, seed=0, shape=(128, 192), base_seed=42):
    """Static textured mosaic burst with iid noise; returns (frames, clean)."""
    rng = np.random.default_rng(seed)
    clean = texture_mosaic(base_seed, shape)
    frames = [clean + rng.normal(0, sigma, shape) for _ in range(n)]
    return frames, clean


def aligned(frames, noise, ref=0):
    return align_burst(frames, "RGGB", ref, noise)


class TestMismatchMaps:
    def test_zero_residual_gives_zero_mismatch(self):
        frames, _ = make_burst(3, 0.0)
        noise = NoiseModel(0.0, 1e-4)
        alignment = aligned(frames, noise)
        mm = mismatch_maps(alignment, noise)
        assert np.all(mm.values >= 0) and np.all(mm.values <= 1)
        assert np.all(mm.values[0] == 0.0)  # reference row

    def test_algebraic_midpoint(self):
        # d^2 = s * sigma^2  ->  m = 0.5 exactly.
        frames, _ = make_burst(2, 0.0)
        noise = NoiseModel(0.0, 1e-4)
        alignment = aligned(frames, noise)
        params = MergeParams(mismatch_scale=0.5)
        var = noise.variance(alignment.ref_tile_mean)
        d = np.sqrt(params.mismatch_scale * var)
        forced = type(alignment)(
            displacements=alignment.displacements,
            residuals=np.stack([np.zeros_like(d), d]),
            ref_tile_mean=alignment.ref_tile_mean,
            ref_index=0,
            tile_size=alignment.tile_size,
        )
        mm = mismatch_maps(forced, noise, params)
        assert np.allclose(mm.values[1], 0.5, atol=1e-12)

    def test_matches_scalar_formula(self):
        rng = np.random.default_rng(3)
        frames, _ = make_burst(4, 0.02, seed=1)
        noise = NoiseModel(1e-3, 1e-4)
        alignment = aligned(frames, noise)
        params = MergeParams(mismatch_scale=0.5)
        mm = mismatch_maps(alignment, noise, params)
        z, i, j = 2, rng.integers(8), rng.integers(12)
        d = alignment.residuals[z, i, j]
        var = float(noise.variance(alignment.ref_tile_mean[i, j]))
        want = d * d / (d * d + 0.5 * var)
        assert mm.values[z, i, j] == pytest.approx(want, abs=1e-12)


class TestStrengthFactor:
    def test_zero_mismatch_darkest_scene(self):
        params = MergeParams(f_max_by_noise=DARK_TABLE)
        assert strength_factor(0.0, 0.08, params) == pytest.approx(8.0)

    def test_full_mismatch_is_unity(self):
        params = MergeParams(f_max_by_noise=DARK_TABLE)
        assert strength_factor(1.0, 0.08, params) == pytest.approx(1.0)

    def test_midpoint_linearity(self):
        params = MergeParams(f_max_by_noise=DARK_TABLE, m_lo=0.1, m_hi=0.5)
        mid = strength_factor(0.3, 0.08, params)
        assert mid == pytest.approx((8.0 + 1.0) / 2)

    def test_table_interpolation(self):
        params = MergeParams(f_max_by_noise=DARK_TABLE)
        assert strength_factor(0.045, 0.045, params) == pytest.approx(4.5)

    def test_bounds_always_hold(self):
        params = MergeParams(f_max_by_noise=DARK_TABLE)
        m = np.linspace(0, 1, 101)
        f = strength_factor(m, 0.05, params)
        assert np.all(f >= params.f_min - 1e-12)
        assert np.all(f <= 8.0 + 1e-12)
        assert np.all(np.diff(f) <= 1e-12)  # non-increasing in mismatch


class TestMergeFourier:
    def test_identical_frames_reconstruct_bit_exactly(self):
        frames, _ = make_burst(5, 0.0)
        noise = NoiseModel(0.0, 1e-4)
        alignment = aligned(frames, noise)
        merged = merge_fourier(frames, "RGGB", alignment, None, noise)
        ref_planes = np.stack([frames[0][dy::2, dx::2]
                               for dy, dx in [(0, 0), (0, 1), (1, 0), (1, 1)]])
        assert np.array_equal(merged.planes, ref_planes)
        assert np.allclose(merged.n_eff, 5.0)

    def test_force_f1_equals_unit_strength_table(self):
        frames, _ = make_burst(4, 0.02, seed=5)
        noise = NoiseModel(0.0, 4e-4)
        alignment = aligned(frames, noise)
        base = merge_fourier(frames, "RGGB", alignment, None, noise,
                             MergeParams(force_f1=True))
        unit_table = MergeParams(f_max_by_noise=((0.01, 1.0), (0.08, 1.0)),
                                 f_min=1.0)
        full = merge_fourier(frames, "RGGB", alignment,
                             mismatch_maps(alignment, noise, unit_table),
                             noise, unit_table)
        assert np.array_equal(base.planes, full.planes)
        assert np.array_equal(base.n_eff, full.n_eff)

    def test_static_burst_variance_approaches_sigma2_over_n(self):
        sigma = 0.03
        n = 8
        frames, clean = make_burst(n, sigma, seed=7, shape=(256, 256))
        noise = NoiseModel(0.0, sigma ** 2)
        alignment = aligned(frames, noise)
        merged = merge_fourier(frames, "RGGB", alignment, None, noise,
                               MergeParams(temporal_strength=1e4, force_f1=True))
        crop = (slice(16, -16), slice(16, -16))
        got_var = np.var(merged.mosaic()[crop] - clean[crop])
        want = sigma ** 2 / n
        assert got_var == pytest.approx(want, rel=0.25)
        oracle_var = np.var(average_merge_oracle(frames)[crop] - clean[crop])
        assert got_var == pytest.approx(oracle_var, rel=0.15)

    def test_channel_coupling_uses_minimum_weight(self):
        # Corrupting only the red plane of one frame must suppress that
        # frame's shared weight for every channel in the affected tiles.
        frames, _ = make_burst(2, 0.005, seed=9)
        rng = np.random.default_rng(11)
        alt = frames[1].copy()
        alt[64:96:2, 64:96:2] = rng.uniform(0.1, 0.9, (16, 16))  # R sites only
        frames[1] = alt
        noise = NoiseModel(0.0, 2.5e-5)
        alignment = aligned(frames, noise)
        merged = merge_fourier(frames, "RGGB", alignment, None, noise,
                               MergeParams(temporal_strength=32.0, force_f1=True))
        w = merged.frame_weights[1]
        corrupt = w[4:6, 4:6]
        outside = w[0:2, 0:2]
        assert corrupt.max() < 0.2
        assert outside.min() > 0.9

    def test_motion_robustness_weights(self):
        # One frame fully replaced by unrelated content (so block matching
        # cannot drift onto a genuine partial match): its weights collapse
        # in every tile while frames that agree keep merging strongly at
        # dark-scene tuning.
        sigma = 0.015
        frames, _ = make_burst(6, sigma, seed=13, shape=(128, 192))
        rng = np.random.default_rng(17)
        frames[3] = rng.uniform(0.0, 1.0, frames[3].shape)
        noise = NoiseModel(0.0, sigma ** 2)
        alignment = aligned(frames, noise)
        params = MergeParams(f_max_by_noise=DARK_TABLE)
        mm = mismatch_maps(alignment, noise, params)
        merged = merge_fourier(frames, "RGGB", alignment, mm, noise, params)
        w = merged.frame_weights
        assert w[3].mean() < 0.1
        static = np.concatenate([w[1].ravel(), w[5].ravel()])
        assert static.mean() > 0.8

    def test_neff_bounds(self):
        frames, _ = make_burst(7, 0.02, seed=19)
        noise = NoiseModel(0.0, 4e-4)
        alignment = aligned(frames, noise)
        merged = merge_fourier(frames, "RGGB", alignment, None, noise)
        assert np.all(merged.n_eff >= 1.0)
        assert np.all(merged.n_eff <= 7.0 + 1e-9)


def band_energy(plane, lo=2):
    """Total non-DC spectral energy above `lo` cycles per 8x8 block."""
    h, w = plane.shape
    tiles = plane[:h // 8 * 8, :w // 8 * 8].reshape(h // 8, 8, w // 8, 8)
    f = np.fft.fft2(tiles.transpose(0, 2, 1, 3))
    fy = np.minimum(np.arange(8), 8 - np.arange(8))
    mask = (fy[:, None] + fy[None, :]) >= lo
    return float(np.sum(np.abs(f) ** 2 * mask))


class TestSpatialDenoise:
    def _merged(self, content, n_eff):
        planes = np.stack([content[dy::2, dx::2]
                           for dy, dx in [(0, 0), (0, 1), (1, 0), (1, 1)]])
        return MergedRaw(planes=planes, cfa="RGGB", n_eff=n_eff)

    def test_tiny_variance_is_identity(self):
        content = texture_mosaic(21, (128, 192))
        rows, cols = 8, 12
        merged = self._merged(content, np.full((rows, cols), 13.0))
        out = spatial_denoise(merged, NoiseModel(0.0, 1e-10))
        assert np.max(np.abs(out.planes - merged.planes)) < 0.01

    def test_low_neff_tiles_denoised_harder(self):
        content = texture_mosaic(23, (128, 192))
        rows, cols = 8, 12
        n_eff = np.full((rows, cols), 13.0)
        n_eff[2, 2] = 1.0
        merged = self._merged(content, n_eff)
        out = spatial_denoise(merged, NoiseModel(0.0, 4e-4))
        # Same content at tiles (2,2) and (2,8): compare HF energy loss.
        region_a = (slice(2 * 8, 3 * 8), slice(2 * 8, 3 * 8))
        region_b = (slice(2 * 8, 3 * 8), slice(8 * 8, 9 * 8))
        in_a = band_energy(merged.planes[0][region_a])
        in_b = band_energy(merged.planes[0][region_b])
        out_a = band_energy(out.planes[0][region_a])
        out_b = band_energy(out.planes[0][region_b])
        assert (in_a - out_a) / in_a > (in_b - out_b) / in_b

    def test_pure_noise_high_frequencies_crushed(self):
        rng = np.random.default_rng(25)
        sigma = 0.05
        content = 0.5 + rng.normal(0, sigma, (128, 192))
        rows, cols = 8, 12
        merged = self._merged(content, np.ones((rows, cols)))
        out = spatial_denoise(merged, NoiseModel(0.0, sigma ** 2))
        hf_in = band_energy(merged.planes[0], lo=3)
        hf_out = band_energy(out.planes[0], lo=3)
        assert hf_out <= 0.30 * hf_in
