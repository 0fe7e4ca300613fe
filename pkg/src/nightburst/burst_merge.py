"""Motion-adaptive Fourier-domain temporal merging and spatial denoising.

Each CFA plane is processed in 8x8 tiles (16x16 mosaic pixels) with half-tile
overlap and a raised-cosine synthesis window that forms a partition of unity.
Per tile and frame, frequency-band weights follow a Wiener-style shrinkage of
the tile difference against the noise variance, scaled by the temporal
strength c and a spatially varying factor derived from per-tile mismatch
maps. The merged image is accumulated as a correction on top of the
reference frame, so a burst of identical frames reproduces the reference
bit-exactly.

All noise models passed here must already be scaled to the burst's gain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .burst_align import MERGE_TILE, TileAlignment
from .errors import InputError
from .raw_model import LinearImage, NoiseModel, assemble_mosaic, cfa_planes

TILE = MERGE_TILE // 2  # per-plane tile size
_STRIDE = TILE // 2


@dataclass(frozen=True)
class MergeParams:
    """Merge tuning. f_max_by_noise maps scene noise (sigma at mid-gray)
    to the maximum temporal strength factor, interpolated linearly."""

    temporal_strength: float = 8.0      # c
    mismatch_scale: float = 0.5         # s
    f_min: float = 1.0
    f_max_by_noise: tuple = ((0.01, 1.0), (0.08, 8.0))
    m_lo: float = 0.1
    m_hi: float = 0.5
    spatial_strength: float = 2.0
    force_f1: bool = False              # Wiener baseline: f == 1 everywhere

    def __post_init__(self):
        if self.temporal_strength <= 0 or self.mismatch_scale <= 0:
            raise InputError("temporal strength and mismatch scale must be positive")
        if self.f_min < 1.0:
            raise InputError("f_min must be >= 1")
        if not 0 <= self.m_lo < self.m_hi <= 1:
            raise InputError("mismatch breakpoints must satisfy 0 <= m_lo < m_hi <= 1")


@dataclass(frozen=True)
class MismatchMap:
    """Per-frame, per-tile mismatch values in [0, 1]; reference row is 0."""

    values: np.ndarray  # (n_frames, rows, cols)


@dataclass(frozen=True)
class MergedRaw:
    """Merged CFA planes plus the per-tile effective frame count."""

    planes: np.ndarray   # (4, H/2, W/2) normalized signal
    cfa: str
    n_eff: np.ndarray    # (rows, cols), in [1, burst length]
    frame_weights: np.ndarray | None = None  # (n_frames, rows, cols) mean w

    def mosaic(self) -> np.ndarray:
        return assemble_mosaic(list(self.planes), self.cfa)


def scene_noise_level(noise: NoiseModel) -> float:
    """Scalar noise level used to index the f_max table: sigma at mid-gray."""
    return float(noise.sigma(0.5))


def mismatch_maps(
    alignment: TileAlignment,
    noise: NoiseModel,
    params: MergeParams = MergeParams(),
) -> MismatchMap:
    """Shrinkage of alignment residuals: m = d^2 / (d^2 + s * sigma^2)."""
    d2 = alignment.residuals ** 2
    var = noise.variance(alignment.ref_tile_mean)[None, :, :]
    m = d2 / (d2 + params.mismatch_scale * var)
    m[alignment.ref_index] = 0.0
    return MismatchMap(m)


def strength_factor(m, scene_noise: float, params: MergeParams = MergeParams()):
    """Piecewise-linear map from mismatch to the temporal strength factor.

    f_max(scene_noise) below m_lo, falling linearly to f_min at m_hi.
    """
    table = np.asarray(params.f_max_by_noise)
    f_max = float(np.interp(scene_noise, table[:, 0], table[:, 1]))
    t = np.clip((np.asarray(m, dtype=np.float64) - params.m_lo)
                / (params.m_hi - params.m_lo), 0.0, 1.0)
    return f_max + (params.f_min - f_max) * t


def _cosine_window(size: int = TILE) -> np.ndarray:
    x = np.arange(size)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * (x + 0.5) / size)
    return np.outer(w, w)


def _window_grid(hp: int, wp: int):
    """Number of overlapped windows covering a padded (hp, wp) plane."""
    return hp // _STRIDE + 1, wp // _STRIDE + 1


def _gather_windows(planes: np.ndarray, dy, dx):
    """Extract all overlapped windows, displaced per window, edges clipped.

    planes: (C, H, W); dy/dx: scalar or (Hq, Wq) integer displacement.
    Returns (C, Hq, Wq, TILE, TILE).
    """
    c, hp, wp = planes.shape
    hq, wq = _window_grid(hp, wp)
    y0 = _STRIDE * np.arange(hq)[:, None] - _STRIDE + np.broadcast_to(dy, (hq, wq))
    x0 = _STRIDE * np.arange(wq)[None, :] - _STRIDE + np.broadcast_to(dx, (hq, wq))
    iy = np.clip(y0[..., None] + np.arange(TILE), 0, hp - 1)
    ix = np.clip(x0[..., None] + np.arange(TILE), 0, wp - 1)
    return planes[:, iy[:, :, :, None], ix[:, :, None, :]]


def _tile_of_window(hq: int, wq: int, rows: int, cols: int):
    """Map window indices to the merge-tile index containing their center."""
    ty = np.clip(np.arange(hq) // 2, 0, rows - 1)
    tx = np.clip(np.arange(wq) // 2, 0, cols - 1)
    return ty, tx


def _overlap_add(acc: np.ndarray, tiles: np.ndarray) -> None:
    """Accumulate windowed tiles back onto a padded plane, in place.

    Windows on the stride-4 grid split into four non-overlapping parity
    groups, so each group is added with one vectorized block assignment.
    """
    c, hq, wq = tiles.shape[:3]
    for py in (0, 1):
        for px in (0, 1):
            sub = tiles[:, py::2, px::2]
            gy, gx = sub.shape[1], sub.shape[2]
            block = acc[:, _STRIDE * py:_STRIDE * py + TILE * gy,
                        _STRIDE * px:_STRIDE * px + TILE * gx]
            block_view = block.reshape(c, gy, TILE, gx, TILE)
            block_view += sub.transpose(0, 1, 3, 2, 4)


def merge_fourier(
    burst,
    cfa: str,
    alignment: TileAlignment,
    mismatch: MismatchMap | None,
    noise: NoiseModel,
    params: MergeParams = MergeParams(),
) -> MergedRaw:
    """Pairwise weighted average of all frames toward the reference.

    Per frequency band, weight w = 1 - A with
    A = |D|^2 / (|D|^2 + c * f * sigma_dft^2) where D is the tile-difference
    DFT coefficient and sigma_dft^2 the expected |D|^2 under pure noise. The
    minimum w across the four CFA channels merges every channel, preventing
    chroma artifacts. The merged coefficient is
    ref + sum_z w_z (alt_z - ref) / (1 + sum_z w_z).
    """
    n = len(burst)
    mosaics = [f.samples if isinstance(f, LinearImage) else np.asarray(f) for f in burst]
    if mosaics[0].shape[0] % MERGE_TILE or mosaics[0].shape[1] % MERGE_TILE:
        raise InputError(f"mosaic dimensions must be multiples of {MERGE_TILE}")
    if params.force_f1:
        mismatch = None
    elif mismatch is None:
        mismatch = mismatch_maps(alignment, noise, params)

    ref_planes = np.stack(cfa_planes(mosaics[alignment.ref_index], cfa)[0])
    hp, wp = ref_planes.shape[1:]
    hq, wq = _window_grid(hp, wp)
    rows, cols = hp // TILE, wp // TILE
    ty, tx = _tile_of_window(hq, wq, rows, cols)

    ref_tiles = _gather_windows(ref_planes, 0, 0)
    ref_f = np.fft.fft2(ref_tiles)

    # Expected |D|^2 of a pure-noise tile pair, per window (unnormalized DFT).
    sig = ref_tiles.mean(axis=(0, 3, 4))
    var_dft = 2.0 * TILE * TILE * noise.variance(sig)
    scene_sigma = scene_noise_level(noise)

    c = params.temporal_strength
    corr_num = np.zeros_like(ref_f)
    den = np.ones((hq, wq, TILE, TILE))
    frame_weights = np.zeros((n, rows, cols))

    plane_disp = alignment.plane_displacements()
    for z in range(n):
        if z == alignment.ref_index:
            continue
        alt_planes = np.stack(cfa_planes(mosaics[z], cfa)[0])
        dwin_y = plane_disp[z][ty[:, None], tx[None, :], 1]
        dwin_x = plane_disp[z][ty[:, None], tx[None, :], 0]
        alt_f = np.fft.fft2(_gather_windows(alt_planes, dwin_y, dwin_x))
        diff = alt_f - ref_f

        if mismatch is None:
            f_win = np.ones((hq, wq))
        else:
            f_win = strength_factor(
                mismatch.values[z][ty[:, None], tx[None, :]], scene_sigma, params
            )
        denom = (c * f_win * var_dft)[None, :, :, None, None]
        power = diff.real ** 2 + diff.imag ** 2
        w = 1.0 - power / (power + denom)
        w = w.min(axis=0)  # channel coupling

        corr_num += w[None] * diff
        den += w
        frame_weights[z] = w.mean(axis=(2, 3))[1::2, 1::2][:rows, :cols]

    corr_tiles = np.fft.ifft2(corr_num / den[None]).real
    window = _cosine_window()
    acc = np.zeros((4, hp + TILE, wp + TILE))
    _overlap_add(acc, corr_tiles * window)
    merged = ref_planes + acc[:, _STRIDE:_STRIDE + hp, _STRIDE:_STRIDE + wp]

    return MergedRaw(planes=merged, cfa=cfa,
                     n_eff=1.0 + frame_weights.sum(axis=0),
                     frame_weights=frame_weights)


def spatial_denoise(
    merged: MergedRaw,
    noise: NoiseModel,
    params: MergeParams = MergeParams(),
) -> MergedRaw:
    """Frequency-domain Wiener shrinkage driven by the post-merge variance.

    The per-tile variance estimate is sigma^2 / N_eff, so tiles that merged
    fewer frames (high mismatch) receive stronger spatial denoising. The DC
    coefficient is left untouched.
    """
    planes = merged.planes
    hp, wp = planes.shape[1:]
    hq, wq = _window_grid(hp, wp)
    rows, cols = merged.n_eff.shape
    ty, tx = _tile_of_window(hq, wq, rows, cols)

    tiles = _gather_windows(planes, 0, 0)
    tiles_f = np.fft.fft2(tiles)

    sig = tiles.mean(axis=(0, 3, 4))
    neff_win = merged.n_eff[ty[:, None], tx[None, :]]
    var_dft = (TILE * TILE * params.spatial_strength
               * noise.variance(sig) / neff_win)

    power = tiles_f.real ** 2 + tiles_f.imag ** 2
    gain = power / (power + var_dft[None, :, :, None, None])
    gain[..., 0, 0] = 1.0
    corr_tiles = np.fft.ifft2(tiles_f * (gain - 1.0)).real

    window = _cosine_window()
    acc = np.zeros((4, hp + TILE, wp + TILE))
    _overlap_add(acc, corr_tiles * window)
    out = planes + acc[:, _STRIDE:_STRIDE + hp, _STRIDE:_STRIDE + wp]
    return MergedRaw(planes=out, cfa=merged.cfa, n_eff=merged.n_eff)
