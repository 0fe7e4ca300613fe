"""Nighttime tone mapping and finishing.

Turns a merged mosaic into 8-bit sRGB: bilinear demosaic, white balance,
synthetic exposure fusion with illuminance-dependent shadow/highlight gains,
saturation boost and vignetting for dark scenes, and a global contrast curve
that keeps the darkest regions near black so night still looks like night.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .burst_merge import MergedRaw
from .errors import InputError
from .raw_model import _CFA_OFFSETS, _CFA_COLOR

_LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class ToneParams:
    log_lux_min: float = math.log(0.1)
    log_lux_max: float = math.log(200.0)
    shadow_gain_ceiling: float = 2.2
    highlight_fraction: float = 0.2
    saturation_ceiling: float = 0.2
    vignette_onset_lux: float = 5.0
    vignette_strength: float = 0.35
    vignette_corner_angle: float = math.pi / 4  # cos^4 falloff angle at corners
    base_gain_bright: float = 1.0
    base_gain_dark: float = 4.0
    black_percentile: float = 0.5
    black_anchor_max: float = 0.02
    fusion_mu: float = 0.5
    fusion_sigma: float = 0.2

    def __post_init__(self):
        if self.log_lux_min >= self.log_lux_max:
            raise InputError("log-lux thresholds must satisfy min < max")


@dataclass(frozen=True)
class FinishOptions:
    """Ablation switches; all heuristics enabled by default."""

    tone_heuristics: bool = True    # shadow/highlight gains (A_s, A_h)
    saturation: bool = True
    vignette: bool = True
    black_anchor: bool = True


@dataclass(frozen=True)
class SceneStats:
    illuminance_lux: float          # E_v
    dynamic_range: float            # D, normalized to [0, 1]

    def __post_init__(self):
        if self.illuminance_lux <= 0:
            raise InputError("illuminance must be positive")
        if not 0 <= self.dynamic_range <= 1:
            raise InputError("dynamic range must be within [0, 1]")


def shadow_gain(illuminance_lux: float, params: ToneParams = ToneParams()) -> float:
    """Shadow (long synthetic exposure) gain, rising as the scene darkens."""
    if illuminance_lux <= 0:
        raise InputError("illuminance must be positive")
    t = (math.log(illuminance_lux) - params.log_lux_min) / (
        params.log_lux_max - params.log_lux_min)
    return params.shadow_gain_ceiling ** (1.0 - min(1.0, max(0.0, t)))


def highlight_gain(a_s: float, dynamic_range: float,
                   params: ToneParams = ToneParams()) -> float:
    """Fraction of the shadow boost leaked into the highlights."""
    return 1.0 + params.highlight_fraction * (a_s - 1.0) * (1.0 - dynamic_range)


def saturation_factor(illuminance_lux: float, params: ToneParams = ToneParams()) -> float:
    t = (params.log_lux_max - math.log(illuminance_lux)) / (
        params.log_lux_max - params.log_lux_min)
    return 1.0 + params.saturation_ceiling * min(1.0, max(0.0, t))


def base_gain(illuminance_lux: float, params: ToneParams = ToneParams()) -> float:
    """Overall brightening, ramped log-linearly from bright to dark scenes."""
    t = (params.log_lux_max - math.log(illuminance_lux)) / (
        params.log_lux_max - params.log_lux_min)
    t = min(1.0, max(0.0, t))
    return params.base_gain_bright + t * (params.base_gain_dark - params.base_gain_bright)


def vignette_ramp(illuminance_lux: float, params: ToneParams = ToneParams()) -> float:
    """0 above the onset lux, rising toward 1 in the darkest scenes."""
    t = (math.log(params.vignette_onset_lux) - math.log(illuminance_lux)) / (
        math.log(params.vignette_onset_lux) - params.log_lux_min)
    return min(1.0, max(0.0, t))


def vignette_gain_at(r_norm, illuminance_lux: float,
                     params: ToneParams = ToneParams()):
    """Radial gain at normalized corner distance r (0 center, 1 corner)."""
    ramp = vignette_ramp(illuminance_lux, params) * params.vignette_strength
    falloff = np.cos(np.minimum(np.asarray(r_norm) * params.vignette_corner_angle,
                                0.5 * np.pi)) ** 4
    return 1.0 - ramp * (1.0 - falloff)


def tone_curve(y, black_point: float):
    """Monotone global curve: linear stretch that pins `black_point` to 0."""
    if not 0 <= black_point < 1:
        raise InputError("black point must be in [0, 1)")
    return np.clip((np.asarray(y, dtype=np.float64) - black_point)
                   / (1.0 - black_point), 0.0, None)


def srgb_encode(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1 / 2.4) - 0.055)


def demosaic_bilinear(mosaic: np.ndarray, cfa: str) -> np.ndarray:
    """Plain bilinear interpolation of each CFA color onto the full grid."""
    h, w = mosaic.shape
    sparse = {c: np.zeros((h, w)) for c in "RGB"}
    for (dy, dx), color in zip(_CFA_OFFSETS[cfa], _CFA_COLOR[cfa]):
        sparse[color][dy::2, dx::2] = mosaic[dy::2, dx::2]

    k_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
    k_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0
    out = np.empty((h, w, 3))
    out[..., 0] = ndimage.convolve(sparse["R"], k_rb, mode="mirror")
    out[..., 1] = ndimage.convolve(sparse["G"], k_g, mode="mirror")
    out[..., 2] = ndimage.convolve(sparse["B"], k_rb, mode="mirror")
    return out


def estimate_scene_stats(linear_rgb: np.ndarray, exposure_time: float, gain: float,
                         lux_calibration: float = 60.0,
                         params: ToneParams = ToneParams()) -> SceneStats:
    """Photometric illuminance from exposure metadata plus the normalized
    dynamic range of the base-gained image."""
    luma = linear_rgb @ _LUMA
    ev = lux_calibration * float(luma.mean()) / (exposure_time * gain)
    ev = max(ev, 1e-4)
    based = np.clip(luma * base_gain(ev, params), 0.0, 1.0)
    d = float(np.percentile(based, 99.5) - np.percentile(based, 1.0))
    return SceneStats(illuminance_lux=ev, dynamic_range=min(1.0, max(0.0, d)))


def _luma(rgb: np.ndarray) -> np.ndarray:
    return rgb @ _LUMA


def finish(
    merged: MergedRaw,
    illuminant,
    stats: SceneStats,
    params: ToneParams = ToneParams(),
    options: FinishOptions = FinishOptions(),
) -> np.ndarray:
    """Render a merged mosaic to 8-bit sRGB. Returns (H, W, 3) uint8."""
    gains = np.asarray(illuminant.gains() if hasattr(illuminant, "gains")
                       else illuminant, dtype=np.float64)
    if np.any(gains <= 0):
        raise InputError("white-balance gains must be positive")

    rgb = demosaic_bilinear(merged.mosaic(), merged.cfa) * gains
    ev = stats.illuminance_lux
    g0 = base_gain(ev, params)

    if options.tone_heuristics:
        a_s = shadow_gain(ev, params)
        a_h = highlight_gain(a_s, stats.dynamic_range, params)
    else:
        a_s = a_h = 1.0

    shadows = rgb * (g0 * a_s)
    highlights = rgb * (g0 * a_h)
    ws = np.exp(-((np.clip(_luma(shadows), 0, 1) - params.fusion_mu) ** 2)
                / (2 * params.fusion_sigma ** 2))
    wh = np.exp(-((np.clip(_luma(highlights), 0, 1) - params.fusion_mu) ** 2)
                / (2 * params.fusion_sigma ** 2))
    total = ws + wh
    ws = np.where(total > 1e-12, ws / np.maximum(total, 1e-12), 0.5)
    fused = ws[..., None] * shadows + (1.0 - ws)[..., None] * highlights

    if options.saturation:
        y = _luma(fused)[..., None]
        fused = np.maximum(y + saturation_factor(ev, params) * (fused - y), 0.0)

    if options.vignette and ev < params.vignette_onset_lux:
        h, w = fused.shape[:2]
        yy = (np.arange(h) - (h - 1) / 2.0) / max(1.0, (h - 1) / 2.0)
        xx = (np.arange(w) - (w - 1) / 2.0) / max(1.0, (w - 1) / 2.0)
        r = np.sqrt(yy[:, None] ** 2 + xx[None, :] ** 2) / math.sqrt(2.0)
        fused = fused * vignette_gain_at(r, ev, params)[..., None]

    y = _luma(fused)
    black_point = 0.0
    if options.black_anchor and ev < params.vignette_onset_lux:
        black_point = min(float(np.percentile(y, params.black_percentile)),
                          params.black_anchor_max)
        black_point *= vignette_ramp(ev, params)
    mapped = tone_curve(y, black_point)
    scale = np.where(y > 1e-12, mapped / np.maximum(y, 1e-12), 0.0)
    out = fused * scale[..., None]

    return np.clip(np.rint(srgb_encode(out) * 255.0), 0, 255).astype(np.uint8)
