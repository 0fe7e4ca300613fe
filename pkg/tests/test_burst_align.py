import numpy as np
import pytest
from scipy import ndimage

from nightburst.burst_align import (
    AlignParams,
    align_burst,
    pick_tile_size,
    select_reference,
)
from nightburst.errors import InputError
from nightburst.raw_model import NoiseModel

QUIET = NoiseModel(slope=0.0, intercept=1e-12)
BRIGHT = NoiseModel(slope=0.0, intercept=1e-4)  # sigma 0.01, SNR ~50 at 0.5


def texture_mosaic(seed=0, shape=(192, 256), detail=0.25):
    """Periodic band-limited texture in [0.1, 0.9] used as a mosaic."""
    rng = np.random.default_rng(seed)
    h, w = shape
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    amp = np.where((radius > 0) & (radius < detail), 1.0 / (radius + 0.02), 0.0)
    spec = amp * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    tex = np.fft.ifft2(spec).real
    tex = (tex - tex.min()) / np.ptp(tex)
    return 0.1 + 0.8 * tex


class TestSelectReference:
    def test_sharpest_frame_wins(self):
        base = texture_mosaic(0)
        burst = [ndimage.uniform_filter(base, 5) for _ in range(4)]
        burst[2] = base
        choice = select_reference(burst, "RGGB", pool_k=4)
        assert choice.index == 2

    def test_identical_frames_tie_break_to_first(self):
        base = texture_mosaic(1)
        choice = select_reference([base, base.copy(), base.copy()], "RGGB", 3)
        assert choice.index == 0

    def test_pool_of_one(self):
        frames = [ndimage.uniform_filter(texture_mosaic(2), 7), texture_mosaic(2)]
        assert select_reference(frames, "RGGB", pool_k=1).index == 0

    def test_pool_larger_than_burst_rejected(self):
        with pytest.raises(InputError):
            select_reference([texture_mosaic(0)], "RGGB", pool_k=2)


class TestTileSize:
    def test_noise_level_selects_tile_size(self):
        params = AlignParams()
        assert pick_tile_size(0.5, NoiseModel(0, 1e-4), params) == 16   # SNR 50
        assert pick_tile_size(0.25, NoiseModel(0, 2.6e-3), params) == 32  # SNR ~5
        assert pick_tile_size(0.1, NoiseModel(0, 2.5e-3), params) == 64  # SNR 2


class TestAlignBurst:
    def test_identical_frames_have_zero_displacement_and_residual(self):
        base = texture_mosaic(3)
        alignment = align_burst([base, base.copy()], "RGGB", 0, BRIGHT)
        assert np.all(alignment.displacements == 0)
        assert np.all(alignment.residuals[1] == 0.0)

    def test_global_shift_recovered_exactly(self):
        base = texture_mosaic(4)
        alt = np.roll(base, shift=(-2, 6), axis=(0, 1))  # content moves (+6, -2)
        alignment = align_burst([base, alt], "RGGB", 0, BRIGHT)
        assert np.all(alignment.displacements[1, :, :, 0] == 6)
        assert np.all(alignment.displacements[1, :, :, 1] == -2)

    def test_offset_added_to_both_frames_changes_nothing(self):
        base = texture_mosaic(5)
        alt = np.roll(base, shift=(2, -4), axis=(0, 1))
        a0 = align_burst([base, alt], "RGGB", 0, BRIGHT)
        a1 = align_burst([np.clip(base + 0.05, 0, 1.2),
                          np.clip(alt + 0.05, 0, 1.2)], "RGGB", 0, BRIGHT)
        assert np.array_equal(a0.displacements, a1.displacements)

    def test_uncorrelated_scene_has_large_residuals(self):
        rng = np.random.default_rng(6)
        sigma = 0.01
        noise = NoiseModel(slope=0.0, intercept=sigma ** 2)
        ref = texture_mosaic(7) + rng.normal(0, sigma, (192, 256))
        alt = texture_mosaic(8) + rng.normal(0, sigma, (192, 256))
        alignment = align_burst([ref, alt], "RGGB", 0, noise)
        noise_level = 2 * sigma / np.sqrt(np.pi)  # E|n1 - n2|
        frac = np.mean(alignment.residuals[1] > 2.0 * noise_level)
        assert frac >= 0.95

    def test_shift_recovery_rate_over_random_shifts(self):
        # Judge only tiles whose true correspondence lies inside both
        # frames; content rolled off the border has no correct answer.
        base = texture_mosaic(9)
        rng = np.random.default_rng(10)
        for _ in range(5):
            dx, dy = 2 * rng.integers(-12, 13, size=2)
            alt = np.roll(base, shift=(dy, dx), axis=(0, 1))
            alignment = align_burst([base, alt], "RGGB", 0, BRIGHT)
            hits = ((alignment.displacements[1, :, :, 0] == dx)
                    & (alignment.displacements[1, :, :, 1] == dy))
            rows, cols = hits.shape
            r0, r1 = max(0, -dy) // 16 + 1, rows - max(0, dy) // 16 - 1
            c0, c1 = max(0, -dx) // 16 + 1, cols - max(0, dx) // 16 - 1
            assert hits[r0:r1, c0:c1].mean() >= 0.99

    def test_single_frame_rejected(self):
        with pytest.raises(InputError):
            align_burst([texture_mosaic(0)], "RGGB", 0, BRIGHT)
