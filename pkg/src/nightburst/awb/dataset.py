"""Synthetic tinted-scene dataset for training and evaluating the estimator.

Scenes are smooth random reflectance fields with occasional saturated
patches, lit by a pool of Planckian and neon-like illuminants. Low simulated
lux biases the pool toward heavy red/amber tints, and scenes may lack a
color channel entirely, in which case the tagged illuminant for that channel
is deliberately unreliable (mimicking how ground truth cannot be annotated
for a color that is absent).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .features import THUMB_SHAPE

_C2 = 1.4388e-2          # Wien displacement constant, m*K
_WAVELENGTHS = np.array([650e-9, 550e-9, 450e-9])
_AE_TARGET = 2.0         # lux * exposure * gain aimed for by the fake AE

_NEON_POOL = np.array([
    [1.8, 1.0, 0.25],    # sodium/amber
    [1.5, 1.0, 0.10],    # deep amber
    [0.5, 1.0, 0.35],    # green neon
    [1.3, 1.0, 1.60],    # purple/blue club light
    [2.5, 1.0, 0.40],    # red lamp
])


@dataclass(frozen=True)
class AwbExample:
    thumbnail: np.ndarray        # (48, 64, 3) linear RGB, canonical space
    exposure_time: float
    gain: float
    illuminant: np.ndarray       # tagged white point, RGB
    mean_true: np.ndarray        # mean color of the tagged-white-balanced image
    face_mask: np.ndarray | None = None


def planckian_rgb(temperature: float) -> np.ndarray:
    """Approximate camera RGB of a blackbody, normalized so 5500 K is neutral."""
    def wien(t):
        return np.exp(-_C2 / (_WAVELENGTHS * t))
    rgb = wien(temperature) / wien(5500.0)
    return rgb / rgb[1]


def _random_illuminant(rng: np.random.Generator, lux: float) -> np.ndarray:
    dark = lux < 10.0
    if rng.random() < (0.45 if dark else 0.15):
        base = _NEON_POOL[rng.integers(len(_NEON_POOL))].copy()
        base *= np.exp(rng.normal(0, 0.08, size=3))
        return base / base[1]
    t_lo, t_hi = (1500.0, 3200.0) if dark else (3200.0, 7500.0)
    temperature = np.exp(rng.uniform(np.log(t_lo), np.log(t_hi)))
    rgb = planckian_rgb(temperature) * np.exp(rng.normal(0, 0.05, size=3))
    return rgb / rgb[1]


def _random_reflectance(rng: np.random.Generator) -> np.ndarray:
    h, w = THUMB_SHAPE
    base = rng.uniform(0.25, 0.6)
    coarse = rng.normal(0.0, 0.12, size=(6, 8, 3))
    smooth = ndimage.zoom(coarse, (h / 6, w / 8, 1), order=1, grid_mode=True,
                          mode="nearest")
    refl = np.clip(base + smooth, 0.05, 1.0)
    for _ in range(rng.integers(0, 4)):
        y0, x0 = rng.integers(0, h - 8), rng.integers(0, w - 8)
        hh, ww = rng.integers(6, h // 2), rng.integers(6, w // 2)
        color = rng.uniform(0.1, 0.9, size=3)
        refl[y0:y0 + hh, x0:x0 + ww] = color
    return refl


def make_example(rng: np.random.Generator, lux: float | None = None) -> AwbExample:
    if lux is None:
        lux = float(np.exp(rng.uniform(np.log(0.05), np.log(1000.0))))
    refl = _random_reflectance(rng)
    illum_actual = _random_illuminant(rng, lux)

    # Occasionally remove a color channel from the scene entirely.
    p_missing = 0.35 if lux < 10 else 0.08
    if rng.random() < p_missing:
        channel = int(rng.choice([0, 2], p=[0.3, 0.7]))
        refl[..., channel] *= rng.uniform(0.0, 0.03)

    sensitivity = float(np.clip(_AE_TARGET / lux, 5e-4, 40.0))
    exposure_time = min(0.333, sensitivity)
    gain = max(1.0, sensitivity / exposure_time)

    img = refl * illum_actual
    img *= (lux * sensitivity / _AE_TARGET) * rng.uniform(0.3, 0.5) / max(img.mean(), 1e-9)
    noise_sigma = 0.004 * np.sqrt(max(1.0, gain / 8.0))
    img = img + rng.normal(0.0, noise_sigma, size=img.shape) * np.sqrt(
        np.maximum(img, 0.02) / 0.25)
    img = np.clip(img, 0.0, 1.2)

    # Tagged white point: unreliable in channels the scene does not contain.
    truth = img / illum_actual
    mu_probe = truth.mean(axis=(0, 1))
    tagged = illum_actual.copy()
    missing = mu_probe < 0.05 * mu_probe.max()
    if np.any(missing):
        tagged[missing] *= np.exp(rng.normal(0.0, 0.45, size=int(missing.sum())))
    tagged /= tagged[1]

    mean_true = (img / tagged).mean(axis=(0, 1))
    return AwbExample(
        thumbnail=img,
        exposure_time=exposure_time,
        gain=gain,
        illuminant=tagged,
        mean_true=np.maximum(mean_true, 0.0),
    )


def generate_awb_dataset(n: int, seed: int = 0, lux_values=None) -> list:
    """Seed-deterministic list of n synthetic examples."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        lux = None if lux_values is None else float(lux_values[i % len(lux_values)])
        out.append(make_example(rng, lux))
    return out


def save_dataset(path: str, dataset) -> None:
    np.savez(
        path,
        thumbnails=np.stack([ex.thumbnail for ex in dataset]),
        exposure_times=np.array([ex.exposure_time for ex in dataset]),
        gains=np.array([ex.gain for ex in dataset]),
        illuminants=np.stack([ex.illuminant for ex in dataset]),
        means_true=np.stack([ex.mean_true for ex in dataset]),
    )


def load_dataset(path: str) -> list:
    with np.load(path) as data:
        return [
            AwbExample(
                thumbnail=data["thumbnails"][i],
                exposure_time=float(data["exposure_times"][i]),
                gain=float(data["gains"][i]),
                illuminant=data["illuminants"][i],
                mean_true=data["means_true"][i],
            )
            for i in range(len(data["gains"]))
        ]
