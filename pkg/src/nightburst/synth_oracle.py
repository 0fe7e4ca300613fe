"""Synthetic bursts and independent brute-force oracles for testing.

Scene textures are periodic (Fourier-synthesized), so continuous global or
per-region motion wraps cleanly and the ground-truth flow is known exactly.
All generators are deterministic given a seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .raw_model import _CFA_OFFSETS, _CFA_COLOR, NoiseModel, RawFrame


@dataclass(frozen=True)
class SyntheticScene:
    width: int = 256                  # mosaic px, multiple of 32
    height: int = 192
    seed: int = 0
    global_motion: tuple = (0.0, 0.0)   # (dx, dy) px per frame
    moving_region: tuple | None = None  # (y0, x0, y1, x1)
    region_motion: tuple = (0.0, 0.0)
    illuminant: tuple = (1.0, 1.0, 1.0)
    lux: float = 1.0
    signal_level: float = 0.4           # mean normalized signal of the render
    detail: float = 1.0                 # texture high-frequency content


def _periodic_texture(h: int, w: int, seed: int, detail: float) -> np.ndarray:
    """Band-limited periodic RGB reflectance with a 1/f-ish spectrum."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    radius = np.hypot(fy, fx)
    amp = np.where(radius > 0, 1.0 / (radius + 0.02), 0.0)
    amp *= radius < 0.25 * detail

    luma_spec = amp * (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w)))
    luma = np.fft.ifft2(luma_spec).real
    luma = (luma - luma.min()) / max(np.ptp(luma), 1e-9)

    out = np.empty((h, w, 3))
    for c in range(3):
        chroma_spec = amp * (rng.normal(size=(h, w)) + 1j * rng.normal(size=(h, w)))
        chroma = np.fft.ifft2(chroma_spec).real
        chroma = chroma / max(np.abs(chroma).max(), 1e-9)
        out[..., c] = np.clip(0.2 + 0.7 * luma + 0.1 * chroma, 0.02, 1.0)
    return out


def _sample_shifted(texture: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Sample texture translated by (dx, dy), wrapping at the borders."""
    h, w = texture.shape[:2]
    yy = (np.arange(h) - dy)[:, None] * np.ones(w)
    xx = np.ones(h)[:, None] * (np.arange(w) - dx)
    out = np.empty_like(texture)
    for c in range(texture.shape[2]):
        out[..., c] = ndimage.map_coordinates(
            texture[..., c], [yy, xx], order=1, mode="grid-wrap")
    return out


def render_clean(scene: SyntheticScene, frame_pos: float,
                 blur_fraction: float = 1.0, taps: int = 8) -> np.ndarray:
    """Linear RGB frame at a continuous position with simulated motion blur.

    Blur is the average of `taps` sub-exposure samples spanning
    blur_fraction of the per-frame motion.
    """
    texture = _periodic_texture(scene.height, scene.width, scene.seed, scene.detail)
    gx, gy = scene.global_motion
    rx, ry = scene.region_motion
    acc = np.zeros_like(texture)
    for t in (np.arange(taps) + 0.5) / taps:
        pos = frame_pos + t * blur_fraction
        frame = _sample_shifted(texture, gy * pos, gx * pos)
        if scene.moving_region is not None:
            y0, x0, y1, x1 = scene.moving_region
            moved = _sample_shifted(texture, ry * pos, rx * pos)
            frame[y0:y1, x0:x1] = moved[y0:y1, x0:x1]
        acc += frame
    rgb = acc / taps
    rgb = rgb * np.asarray(scene.illuminant)
    return rgb * (scene.signal_level / rgb.mean())


def _mosaic_from_rgb(rgb: np.ndarray, cfa: str) -> np.ndarray:
    h, w = rgb.shape[:2]
    mosaic = np.empty((h, w))
    channel_index = {"R": 0, "G": 1, "B": 2}
    for (dy, dx), color in zip(_CFA_OFFSETS[cfa], _CFA_COLOR[cfa]):
        mosaic[dy::2, dx::2] = rgb[dy::2, dx::2, channel_index[color]]
    return mosaic


def generate_burst(
    scene: SyntheticScene,
    n_frames: int,
    exposure_time: float,
    gain: float,
    noise: NoiseModel,
    seed: int = 0,
    cfa: str = "RGGB",
    black_level: int = 64,
    white_level: int = 1023,
    blur_fraction: float = 1.0,
):
    """Render a noisy mosaicked burst; returns (frames, truth).

    truth carries the clean normalized mosaic of frame 0 and the
    ground-truth flow magnitude field per frame interval.
    """
    rng = np.random.default_rng(seed)
    span = white_level - black_level
    frames = []
    clean0 = None
    for i in range(n_frames):
        rgb = render_clean(scene, float(i), blur_fraction)
        mosaic = _mosaic_from_rgb(rgb, cfa)
        if i == 0:
            clean0 = mosaic.copy()
        sigma = noise.sigma(mosaic)
        noisy = mosaic + rng.normal(size=mosaic.shape) * sigma
        dn = np.clip(np.rint(noisy * span + black_level), 0, white_level)
        frames.append(RawFrame(
            width=scene.width,
            height=scene.height,
            cfa=cfa,
            data=dn.astype(np.uint16),
            black_level=(black_level,) * 4,
            white_level=white_level,
            exposure_time=exposure_time,
            gain=gain,
            timestamp=i * exposure_time,
        ))

    flow = np.full((scene.height, scene.width), float(np.hypot(*scene.global_motion)))
    if scene.moving_region is not None:
        y0, x0, y1, x1 = scene.moving_region
        flow[y0:y1, x0:x1] = float(np.hypot(*scene.region_motion))
    truth = {"clean_mosaic": clean0, "flow_magnitude": flow}
    return frames, truth


def write_burst(
    out_dir: str,
    frames,
    noise: NoiseModel,
    gyro_samples=None,
    weight_map=None,
    truth=None,
) -> str:
    """Write frames as 16-bit PGMs plus the JSON sidecar manifest."""
    from .raw_model import write_pgm

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, fr in enumerate(frames):
        name = f"frame_{i:03d}.pgm"
        write_pgm(os.path.join(out_dir, name), fr.data, maxval=65535)
        entries.append({
            "path": name,
            "exposure_time_s": fr.exposure_time,
            "gain": fr.gain,
            "timestamp_s": fr.timestamp,
        })
    doc = {
        "cfa": frames[0].cfa,
        "black_level": list(frames[0].black_level),
        "white_level": frames[0].white_level,
        "noise": {"slope": noise.slope, "intercept": noise.intercept,
                  "ref_gain": noise.ref_gain},
        "frames": entries,
    }
    if gyro_samples is not None:
        doc["gyro"] = [
            {"t_s": float(t), "wx": float(x), "wy": float(y), "wz": float(z)}
            for t, x, y, z in gyro_samples
        ]
    if weight_map is not None:
        write_pgm(os.path.join(out_dir, "weights.pgm"),
                  np.clip(weight_map * 255, 0, 255).astype(np.uint16), maxval=255)
        doc["weight_map"] = "weights.pgm"
    manifest_path = os.path.join(out_dir, "burst.json")
    with open(manifest_path, "w") as f:
        json.dump(doc, f, indent=2)
    if truth is not None:
        np.savez(os.path.join(out_dir, "truth.npz"), **truth)
    return manifest_path


# ----------------------------------------------------------------------------
# Brute-force oracles
# ----------------------------------------------------------------------------

def mc_min_motion(gmm, k: int, trials: int = 200_000, seed: int = 0) -> np.ndarray:
    """Empirical min-of-k draws from the mixture, sorted ascending."""
    rng = np.random.default_rng(seed)
    draws = gmm.sample(trials * k, rng).reshape(trials, k)
    return np.sort(draws.min(axis=1))


def empirical_quantile(sorted_vals: np.ndarray, p: float) -> float:
    return float(np.quantile(sorted_vals, p))


def empirical_cdf(sorted_vals: np.ndarray, x) -> np.ndarray:
    return np.searchsorted(sorted_vals, np.asarray(x), side="right") / len(sorted_vals)


def average_merge_oracle(frames) -> np.ndarray:
    """Plain per-pixel temporal mean of already-aligned frames."""
    arrays = [np.asarray(f, dtype=np.float64) for f in frames]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError("aligned frames must share a shape")
    return np.mean(arrays, axis=0)


def heavy_tailed_motion_sequences(n_sequences: int, length: int, seed: int = 0,
                                  spike_prob: float = 0.25) -> np.ndarray:
    """Motion-sample sequences with a calm cluster plus occasional spikes."""
    rng = np.random.default_rng(seed)
    calm_mu = rng.uniform(0.8, 2.5, size=(n_sequences, 1))
    calm = np.abs(rng.normal(calm_mu, 0.25 * calm_mu, size=(n_sequences, length)))
    spikes = rng.random((n_sequences, length)) < spike_prob
    magnitude = rng.uniform(4.0, 20.0, size=(n_sequences, length))
    return np.maximum(np.where(spikes, magnitude, calm), 0.05)
