"""Log-chroma histogram features for the illuminant estimator."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import InputError

UV_RANGE = 2.1     # histogram covers u, v in [-UV_RANGE, UV_RANGE]
N_BINS = 64
BIN_SIZE = 2 * UV_RANGE / N_BINS
THUMB_SHAPE = (48, 64)

# Bin-center coordinate grids shared by histogram and score-map code.
BIN_CENTERS = -UV_RANGE + (np.arange(N_BINS) + 0.5) * BIN_SIZE
U_GRID = BIN_CENTERS[:, None] * np.ones(N_BINS)
V_GRID = np.ones(N_BINS)[:, None] * BIN_CENTERS


def rgb_to_uv(rgb: np.ndarray):
    """Log-chroma coordinates u = log(g/r), v = log(g/b) per pixel.

    Returns (u, v, valid) where valid marks pixels with all channels
    usefully above zero.
    """
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    valid = (r > 1e-6) & (g > 1e-6) & (b > 1e-6)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(valid, np.log(g / np.maximum(r, 1e-12)), 0.0)
        v = np.where(valid, np.log(g / np.maximum(b, 1e-12)), 0.0)
    return u, v, valid


def uv_to_illuminant_rgb(u: float, v: float) -> np.ndarray:
    """Illuminant RGB (green-normalized) with the given log-chroma."""
    return np.array([np.exp(-u), 1.0, np.exp(-v)])


def uv_histogram(u, v, mask) -> np.ndarray:
    """Mass-normalized 2-D histogram over the fixed log-UV grid."""
    uu = u[mask]
    vv = v[mask]
    hist, _, _ = np.histogram2d(
        uu, vv, bins=N_BINS,
        range=[[-UV_RANGE, UV_RANGE], [-UV_RANGE, UV_RANGE]],
    )
    total = hist.sum()
    return hist / total if total > 0 else hist


def pixel_edge_histograms(thumbnail: np.ndarray, region_mask=None) -> np.ndarray:
    """Two-channel feature: chroma histograms of pixels and of edge energy.

    The edge image is the per-channel sum of absolute horizontal and
    vertical differences; its chroma distribution captures the color of
    local gradients. An optional region mask restricts both channels (used
    for face-weighted histograms).
    """
    if thumbnail.ndim != 3 or thumbnail.shape[2] != 3:
        raise InputError("thumbnail must be an RGB array")
    u, v, valid = rgb_to_uv(thumbnail)
    if region_mask is not None:
        valid = valid & region_mask

    gy = np.abs(np.diff(thumbnail, axis=0, prepend=thumbnail[:1]))
    gx = np.abs(np.diff(thumbnail, axis=1, prepend=thumbnail[:, :1]))
    edges = gy + gx
    ue, ve, evalid = rgb_to_uv(edges)
    if region_mask is not None:
        evalid = evalid & region_mask

    return np.stack([uv_histogram(u, v, valid), uv_histogram(ue, ve, evalid)])


def log_brightness(thumbnail: np.ndarray, exposure_time: float, gain: float,
                   iso_ratio: float = 1.0, floor: float = 1e-6) -> float:
    """Average log scene brightness: log median max-channel minus log exposure.

    E = exposure_time * gain * iso_ratio normalizes away capture settings so
    L reflects the scene itself. An all-black thumbnail is floored rather
    than returning -inf.
    """
    if exposure_time <= 0 or gain <= 0 or iso_ratio <= 0:
        raise InputError("exposure metadata must be positive")
    peak = thumbnail.max(axis=-1) if thumbnail.ndim == 3 else thumbnail
    med = float(np.median(peak))
    return float(np.log(max(med, floor)) - np.log(exposure_time * gain * iso_ratio))


def make_thumbnail(rgb: np.ndarray, shape=THUMB_SHAPE) -> np.ndarray:
    """Downsample a linear RGB image to the estimator's input size and
    median-filter 3x3 to suppress hot pixels."""
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputError("expected a linear RGB image")
    zoom = (shape[0] / rgb.shape[0], shape[1] / rgb.shape[1], 1)
    small = ndimage.zoom(rgb, zoom, order=1, grid_mode=True, mode="nearest")
    return ndimage.median_filter(small, size=(3, 3, 1))


def warp_thumbnail_chroma(thumbnail: np.ndarray, warp_uv) -> np.ndarray:
    """Rewrite every pixel's chroma through a uv warp, keeping green fixed."""
    u, v, valid = rgb_to_uv(thumbnail)
    uv = np.stack([u[valid], v[valid]], axis=1)
    if uv.size == 0:
        return thumbnail.copy()
    warped = warp_uv(uv)
    g = thumbnail[..., 1][valid]
    out = thumbnail.copy()
    out[..., 0][valid] = g * np.exp(-warped[:, 0])
    out[..., 2][valid] = g * np.exp(-warped[:, 1])
    return out
