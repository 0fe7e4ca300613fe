"""Reference selection and tile-based burst alignment.

Alignment runs coarse-to-fine on four-level Gaussian pyramids of the
half-resolution green plane. Displacements are integer and expressed in full
mosaic pixels (always even), so they apply directly to each half-resolution
CFA plane after halving. Alignment tile size grows with the noise level:
16 px tiles in good light, 64 px in the dark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .raw_model import LinearImage, NoiseModel, green_plane, pyr_down

MERGE_TILE = 16  # mosaic pixels; 8 per CFA plane


@dataclass(frozen=True)
class AlignParams:
    search_radius: int = 4      # +- pixels per pyramid level
    levels: int = 4
    snr_high: float = 8.0       # mean-signal / sigma thresholds for tile size
    snr_mid: float = 3.0
    tile_bright: int = 16       # mosaic px
    tile_mid: int = 32
    tile_dark: int = 64


@dataclass(frozen=True)
class ReferenceChoice:
    index: int
    scores: np.ndarray  # sharpness per considered frame


@dataclass(frozen=True)
class TileAlignment:
    """Integer displacements and residuals at merge-tile granularity.

    displacements: (n_frames, rows, cols, 2) int, last axis (dx, dy) in
    mosaic pixels; the reference frame's entries are zero. residuals holds
    the per-tile mean-removed L1 distance d in normalized signal units,
    with the expected pure-noise L1 subtracted so a static noisy tile
    reads near zero and only real content mismatch remains.
    """

    displacements: np.ndarray
    residuals: np.ndarray          # (n_frames, rows, cols)
    ref_tile_mean: np.ndarray      # (rows, cols) mean reference signal
    ref_index: int
    tile_size: int                 # alignment tile size used, mosaic px

    def plane_displacements(self) -> np.ndarray:
        """Displacements in CFA-plane pixels (mosaic / 2)."""
        return self.displacements // 2


def _as_mosaic(frame) -> np.ndarray:
    return frame.samples if isinstance(frame, LinearImage) else np.asarray(frame)


def _sharpness(green: np.ndarray) -> float:
    gy, gx = np.gradient(green)
    return float(np.mean(gx * gx + gy * gy))


def select_reference(burst, cfa: str, pool_k: int = 4) -> ReferenceChoice:
    """Pick the sharpest of the first pool_k frames (ties: earliest)."""
    if pool_k < 1 or pool_k > len(burst):
        raise InputError("reference pool size must be within the burst length")
    scores = np.array([
        _sharpness(green_plane(_as_mosaic(f), cfa)) for f in burst[:pool_k]
    ])
    return ReferenceChoice(int(np.argmax(scores)), scores)


def pick_tile_size(mean_signal: float, noise: NoiseModel, params: AlignParams) -> int:
    snr = mean_signal / float(noise.sigma(mean_signal))
    if snr >= params.snr_high:
        return params.tile_bright
    if snr >= params.snr_mid:
        return params.tile_mid
    return params.tile_dark


def _gather_tiles(plane: np.ndarray, y0: np.ndarray, x0: np.ndarray, size: int):
    """Extract (rows, cols, size, size) tiles at clipped integer offsets."""
    h, w = plane.shape
    iy = np.clip(y0[..., None] + np.arange(size), 0, h - 1)
    ix = np.clip(x0[..., None] + np.arange(size), 0, w - 1)
    return plane[iy[:, :, :, None], ix[:, :, None, :]]


def _residual_l1(ref_tiles: np.ndarray, alt_tiles: np.ndarray,
                 noise_floor) -> np.ndarray:
    """Mean abs difference per tile, mean-removed and noise-compensated.

    `noise_floor` is the expected mean abs difference of two pure-noise
    tiles; subtracting it leaves only content mismatch.
    """
    rc = ref_tiles - ref_tiles.mean(axis=(-2, -1), keepdims=True)
    ac = alt_tiles - alt_tiles.mean(axis=(-2, -1), keepdims=True)
    raw = np.abs(rc - ac).mean(axis=(-2, -1))
    return np.maximum(raw - noise_floor, 0.0)


def _match_level(ref: np.ndarray, alt: np.ndarray, seeds: np.ndarray,
                 tile: int, radius: int) -> np.ndarray:
    """Best integer displacement per tile, searching +-radius around seeds.

    The L1 cost is mean-removed (flicker robustness) and masked to the
    in-frame part of the candidate window, so content that left the frame
    never corrupts the match of tiles that still have a true correspondence.
    """
    h, w = ref.shape
    rows, cols = max(1, h // tile), max(1, w // tile)
    ty = (np.arange(rows) * tile)[:, None] * np.ones(cols, dtype=int)
    tx = np.ones((rows, 1), dtype=int) * (np.arange(cols) * tile)

    ref_tiles = _gather_tiles(ref, ty, tx, tile)

    best_cost = np.full((rows, cols), np.inf)
    best = seeds.copy()
    # Candidates ordered by distance so ties keep the smallest correction.
    offsets = [(dy, dx) for dy in range(-radius, radius + 1)
               for dx in range(-radius, radius + 1)]
    offsets.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    taps = np.arange(tile)
    for dy, dx in offsets:
        cy = ty + seeds[..., 1] + dy
        cx = tx + seeds[..., 0] + dx
        alt_tiles = _gather_tiles(alt, cy, cx, tile)
        my = ((cy[..., None] + taps >= 0) & (cy[..., None] + taps < h)).astype(float)
        mx = ((cx[..., None] + taps >= 0) & (cx[..., None] + taps < w)).astype(float)
        area = my.sum(-1) * mx.sum(-1)
        ok = area >= 0.5 * tile * tile
        safe_area = np.maximum(area, 1.0)
        mean_ref = np.einsum("rcy,rcyx,rcx->rc", my, ref_tiles, mx) / safe_area
        mean_alt = np.einsum("rcy,rcyx,rcx->rc", my, alt_tiles, mx) / safe_area
        diff = np.abs(ref_tiles - alt_tiles
                      - (mean_ref - mean_alt)[..., None, None])
        cost = np.einsum("rcy,rcyx,rcx->rc", my, diff, mx) / safe_area
        cost[~ok] = np.inf
        better = cost < best_cost
        best_cost[better] = cost[better]
        best[better, 0] = seeds[better, 0] + dx
        best[better, 1] = seeds[better, 1] + dy
    return best


def _seed_from_coarse(coarse: np.ndarray, rows: int, cols: int, tile: int,
                      coarse_shape: tuple) -> np.ndarray:
    """Upsample a displacement field to the next finer level grid."""
    crows, ccols = coarse.shape[:2]
    cy = np.clip(((np.arange(rows) * tile + tile // 2) // 2) // tile, 0, crows - 1)
    cx = np.clip(((np.arange(cols) * tile + tile // 2) // 2) // tile, 0, ccols - 1)
    return 2 * coarse[cy[:, None], cx[None, :]]


def align_burst(
    burst,
    cfa: str,
    reference: ReferenceChoice | int,
    noise: NoiseModel,
    params: AlignParams = AlignParams(),
) -> TileAlignment:
    """Align every alternate frame against the reference.

    `noise` must already be scaled to the burst's gain; it selects the
    alignment tile size and the residual noise floor.
    """
    if len(burst) < 2:
        raise InputError("alignment needs at least two frames")
    ref_index = reference.index if isinstance(reference, ReferenceChoice) else int(reference)

    greens = [green_plane(_as_mosaic(f), cfa) for f in burst]
    ref_green = greens[ref_index]
    hp, wp = ref_green.shape

    tile_mosaic = pick_tile_size(float(ref_green.mean()), noise, params)
    tile = tile_mosaic // 2  # plane pixels

    # Pyramids, finest first.
    pyramids = []
    for g in greens:
        levels = [g]
        for _ in range(1, params.levels):
            levels.append(pyr_down(levels[-1]))
        pyramids.append(levels)

    mrows, mcols = hp // (MERGE_TILE // 2), wp // (MERGE_TILE // 2)
    n = len(burst)
    disp = np.zeros((n, mrows, mcols, 2), dtype=np.int64)
    resid = np.zeros((n, mrows, mcols))

    # Reference merge tiles for residuals and signal level.
    half = MERGE_TILE // 2
    my = (np.arange(mrows) * half)[:, None] * np.ones(mcols, dtype=int)
    mx = np.ones((mrows, 1), dtype=int) * (np.arange(mcols) * half)
    ref_merge_tiles = _gather_tiles(ref_green, my, mx, half)
    ref_tile_mean = ref_merge_tiles.mean(axis=(-2, -1))
    # Expected |n1 - n2| between two green-plane tiles (green averaging
    # halves the mosaic variance): E|N(0, 2 var_g)| = sqrt(2/pi) * sd.
    var_green = noise.variance(ref_tile_mean) / 2.0
    noise_floor = np.sqrt(2.0 / np.pi) * np.sqrt(2.0 * var_green)

    for z in range(n):
        if z == ref_index:
            continue
        field = None
        for level in range(params.levels - 1, -1, -1):
            ref_l = pyramids[ref_index][level]
            alt_l = pyramids[z][level]
            rows = max(1, ref_l.shape[0] // tile)
            cols = max(1, ref_l.shape[1] // tile)
            if field is None:
                seeds = np.zeros((rows, cols, 2), dtype=np.int64)
            else:
                seeds = _seed_from_coarse(field, rows, cols, tile, ref_l.shape)
            field = _match_level(ref_l, alt_l, seeds, tile, params.search_radius)

        # Expand alignment-tile displacements to the merge-tile grid.
        arows, acols = field.shape[:2]
        ay = np.clip((np.arange(mrows) * half + half // 2) // tile, 0, arows - 1)
        ax = np.clip((np.arange(mcols) * half + half // 2) // tile, 0, acols - 1)
        disp_m = field[ay[:, None], ax[None, :]]
        disp[z] = disp_m

        alt_tiles = _gather_tiles(
            greens[z], my + disp_m[..., 1], mx + disp_m[..., 0], half
        )
        resid[z] = _residual_l1(ref_merge_tiles, alt_tiles, noise_floor)

    return TileAlignment(
        displacements=disp * 2,  # plane px -> mosaic px
        residuals=resid,
        ref_tile_mean=ref_tile_mean,
        ref_index=ref_index,
        tile_size=tile_mosaic,
    )
