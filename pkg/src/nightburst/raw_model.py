"""Core raw-domain data types and I/O.

Bursts are stored on disk as one 16-bit binary PGM (P5) file per Bayer frame
plus a single JSON sidecar manifest carrying black/white levels, the noise
model, per-frame exposure metadata, and optional gyro samples. Everything
downstream works on `LinearImage` arrays normalized so that 0 = black level
and 1 = white level.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError

CFA_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")

# (row, col) offset of each CFA channel within the 2x2 mosaic cell, in the
# order black levels are stored.
_CFA_OFFSETS = {
    "RGGB": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "BGGR": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "GRBG": ((0, 0), (0, 1), (1, 0), (1, 1)),
    "GBRG": ((0, 0), (0, 1), (1, 0), (1, 1)),
}

# Which of the four plane slots hold R, G, G, B for each pattern.
_CFA_COLOR = {
    "RGGB": ("R", "G", "G", "B"),
    "BGGR": ("B", "G", "G", "R"),
    "GRBG": ("G", "R", "B", "G"),
    "GBRG": ("G", "B", "R", "G"),
}

# 5-tap binomial kernel used for all Gaussian pyramids.
_PYR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class NoiseModel:
    """Signal-dependent variance law sigma^2(x) = slope*x + intercept.

    Both coefficients are expressed in normalized-signal units at `ref_gain`.
    Shot noise scales linearly with gain and read noise quadratically, so a
    model at another gain is obtained with `at_gain`.
    """

    slope: float
    intercept: float
    ref_gain: float = 1.0

    def __post_init__(self):
        if self.slope < 0 or self.intercept < 0:
            raise InputError("noise model coefficients must be non-negative")
        if self.ref_gain <= 0:
            raise InputError("noise model reference gain must be positive")

    def at_gain(self, gain: float) -> "NoiseModel":
        r = gain / self.ref_gain
        return NoiseModel(self.slope * r, self.intercept * r * r, gain)

    def variance(self, signal):
        """Variance of the normalized signal; clipped to stay positive."""
        return np.maximum(self.slope * np.maximum(signal, 0.0) + self.intercept, 1e-12)

    def sigma(self, signal):
        return np.sqrt(self.variance(signal))


@dataclass(frozen=True)
class RawFrame:
    """A single Bayer mosaic with its capture metadata."""

    width: int
    height: int
    cfa: str
    data: np.ndarray  # uint16, shape (height, width)
    black_level: tuple  # per CFA channel, reading order
    white_level: int
    exposure_time: float  # seconds
    gain: float  # combined analog x digital, >= 1
    timestamp: float = 0.0  # seconds

    def __post_init__(self):
        if self.cfa not in CFA_PATTERNS:
            raise InputError(f"unknown CFA pattern {self.cfa!r}")
        if self.data.shape != (self.height, self.width):
            raise InputError(
                f"frame data shape {self.data.shape} does not match "
                f"declared {self.height}x{self.width}"
            )
        if len(self.black_level) != 4:
            raise InputError("black_level must have one entry per CFA channel")
        if max(self.black_level) >= self.white_level:
            raise InputError("black level must be below white level")
        if self.exposure_time <= 0:
            raise InputError("exposure_time must be positive")
        if self.gain < 1:
            raise InputError("gain must be >= 1")

    @property
    def sensitivity(self) -> float:
        """Exposure x gain, in seconds at unit gain."""
        return self.exposure_time * self.gain


@dataclass(frozen=True)
class LinearImage:
    """Normalized floating image: 0 = black level, 1 = white level."""

    samples: np.ndarray  # (H, W) or (H, W, 3) float

    def __post_init__(self):
        if self.samples.ndim not in (2, 3):
            raise InputError("LinearImage must be 2-D or HxWx3")
        if self.samples.ndim == 3 and self.samples.shape[2] != 3:
            raise InputError("multichannel LinearImage must have 3 channels")
        if not np.all(np.isfinite(self.samples)):
            raise InputError("LinearImage contains NaN/Inf")

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.samples.ndim == 2 else 3


@dataclass(frozen=True)
class GyroTrace:
    """Angular-rate samples: columns (t_s, wx, wy, wz), rad/s."""

    samples: np.ndarray  # (N, 4)

    def __post_init__(self):
        if self.samples.ndim != 2 or self.samples.shape[1] != 4:
            raise InputError("gyro trace must be an (N, 4) array")
        t = self.samples[:, 0]
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise InputError("gyro timestamps must be strictly increasing")

    def speeds(self):
        """Euclidean norm of the angular rate per sample."""
        return np.linalg.norm(self.samples[:, 1:4], axis=1)


@dataclass(frozen=True)
class FrameMeta:
    path: str
    exposure_time: float
    gain: float
    timestamp: float


@dataclass(frozen=True)
class BurstManifest:
    """Validated burst: shared geometry/noise plus per-frame metadata."""

    cfa: str
    black_level: tuple
    white_level: int
    noise: NoiseModel
    frames: tuple  # of FrameMeta
    gyro: GyroTrace | None = None
    weight_map_path: str | None = None
    base_dir: str = "."
    extra: dict = field(default_factory=dict)


# ----------------------------------------------------------------------------
# PGM container
# ----------------------------------------------------------------------------

def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM (P5). 16-bit data is big-endian per the format."""
    if not os.path.exists(path):
        raise InputError(f"missing frame file: {path}")
    with open(path, "rb") as f:
        raw = f.read()

    # Header: magic, width, height, maxval, separated by whitespace/comments.
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval

    if len(tokens) < 4 or tokens[0] != b"P5":
        raise InputError(f"corrupt PGM header in {path}: not a binary P5 file")
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise InputError(f"corrupt PGM header in {path}: non-numeric fields") from None
    if width <= 0 or height <= 0 or not 0 < maxval <= 65535:
        raise InputError(f"corrupt PGM header in {path}: bad dimensions or maxval")

    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * dtype.itemsize
    body = raw[pos : pos + need]
    if len(body) != need:
        raise InputError(f"corrupt PGM body in {path}: expected {need} bytes")
    data = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return data.astype(np.uint16)


def write_pgm(path: str, data: np.ndarray, maxval: int = 65535) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise InputError("PGM data must be 2-D")
    header = f"P5\n{data.shape[1]} {data.shape[0]}\n{maxval}\n".encode()
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.clip(data, 0, maxval).astype(dtype).tobytes())


# ----------------------------------------------------------------------------
# Manifest I/O
# ----------------------------------------------------------------------------

def load_manifest(path: str) -> BurstManifest:
    if not os.path.exists(path):
        raise InputError(f"missing manifest file: {path}")
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise InputError(f"corrupt manifest {path}: {e}") from None

    for key in ("frames", "cfa", "black_level", "white_level", "noise"):
        if key not in doc:
            raise InputError(f"manifest {path} is missing required field {key!r}")
    if not doc["frames"]:
        raise InputError(f"manifest {path} references an empty burst")

    cfa = doc["cfa"]
    if cfa not in CFA_PATTERNS:
        raise InputError(f"manifest {path}: unknown CFA pattern {cfa!r}")

    black = doc["black_level"]
    black = tuple(black) if isinstance(black, (list, tuple)) else (black,) * 4
    if len(black) != 4:
        raise InputError(f"manifest {path}: black_level must be scalar or 4 values")

    n = doc["noise"]
    noise = NoiseModel(n["slope"], n["intercept"], n.get("ref_gain", 1.0))

    frames = tuple(
        FrameMeta(
            path=fr["path"],
            exposure_time=float(fr["exposure_time_s"]),
            gain=float(fr["gain"]),
            timestamp=float(fr.get("timestamp_s", i / 30.0)),
        )
        for i, fr in enumerate(doc["frames"])
    )

    gyro = None
    if doc.get("gyro"):
        arr = np.array([[g["t_s"], g["wx"], g["wy"], g["wz"]] for g in doc["gyro"]])
        gyro = GyroTrace(arr)

    return BurstManifest(
        cfa=cfa,
        black_level=black,
        white_level=int(doc["white_level"]),
        noise=noise,
        frames=frames,
        gyro=gyro,
        weight_map_path=doc.get("weight_map"),
        base_dir=os.path.dirname(os.path.abspath(path)),
        extra={k: doc[k] for k in doc if k.startswith("x_")},
    )


def load_burst(manifest_path: str):
    """Load and validate a burst: returns (manifest, [RawFrame, ...]).

    All frames must share dimensions and CFA pattern; violations raise
    `InputError` with a diagnostic naming the offending frame.
    """
    manifest = load_manifest(manifest_path)
    frames = []
    shape = None
    for i, meta in enumerate(manifest.frames):
        fpath = os.path.join(manifest.base_dir, meta.path)
        data = read_pgm(fpath)
        if shape is None:
            shape = data.shape
        elif data.shape != shape:
            raise InputError(
                f"dimension mismatch: frame {i} ({meta.path}) is "
                f"{data.shape[1]}x{data.shape[0]}, burst is {shape[1]}x{shape[0]}"
            )
        data = np.minimum(data, manifest.white_level).astype(np.uint16)
        frames.append(
            RawFrame(
                width=shape[1],
                height=shape[0],
                cfa=manifest.cfa,
                data=data,
                black_level=manifest.black_level,
                white_level=manifest.white_level,
                exposure_time=meta.exposure_time,
                gain=meta.gain,
                timestamp=meta.timestamp,
            )
        )
    return manifest, frames


def load_weight_map(manifest: BurstManifest) -> np.ndarray | None:
    """Optional externally supplied weight map (8-bit PGM), as float [0,1]."""
    if manifest.weight_map_path is None:
        return None
    data = read_pgm(os.path.join(manifest.base_dir, manifest.weight_map_path))
    return data.astype(np.float64) / max(1, data.max())


# ----------------------------------------------------------------------------
# Normalization and CFA plane handling
# ----------------------------------------------------------------------------

def _black_image(frame: RawFrame) -> np.ndarray:
    black = np.empty((frame.height, frame.width))
    for level, (dy, dx) in zip(frame.black_level, _CFA_OFFSETS[frame.cfa]):
        black[dy::2, dx::2] = level
    return black


def normalize(frame: RawFrame, relative_to_sensitivity: float | None = None) -> LinearImage:
    """Map raw DNs to [0, 1] with 0 = black level, 1 = white level.

    If `relative_to_sensitivity` is given (exposure_time x gain of a
    reference frame), the result is additionally scaled so frames of
    different exposure become directly comparable; scaled values may
    exceed 1.
    """
    black = _black_image(frame)
    span = frame.white_level - black
    out = (frame.data.astype(np.float64) - black) / span
    out = np.clip(out, 0.0, 1.0)
    if relative_to_sensitivity is not None:
        out = out * (relative_to_sensitivity / frame.sensitivity)
    return LinearImage(out)


def denormalize(image: LinearImage, black_level, white_level: int, cfa: str) -> np.ndarray:
    """Inverse of `normalize` (without exposure scaling), to uint16 DNs."""
    black = np.empty(image.samples.shape)
    for level, (dy, dx) in zip(black_level, _CFA_OFFSETS[cfa]):
        black[dy::2, dx::2] = level
    dn = image.samples * (white_level - black) + black
    return np.clip(np.rint(dn), 0, white_level).astype(np.uint16)


def cfa_planes(mosaic: np.ndarray, cfa: str):
    """Split a mosaic into its four half-resolution CFA planes.

    Returns (planes, colors): a list of four (H/2, W/2) arrays in reading
    order and the matching color letter for each ('R'/'G'/'B').
    """
    planes = [mosaic[dy::2, dx::2] for dy, dx in _CFA_OFFSETS[cfa]]
    return planes, _CFA_COLOR[cfa]


def assemble_mosaic(planes, cfa: str) -> np.ndarray:
    h, w = planes[0].shape
    out = np.empty((2 * h, 2 * w), dtype=planes[0].dtype)
    for plane, (dy, dx) in zip(planes, _CFA_OFFSETS[cfa]):
        out[dy::2, dx::2] = plane
    return out


def green_plane(mosaic: np.ndarray, cfa: str) -> np.ndarray:
    """Half-resolution mean of the two green CFA planes."""
    planes, colors = cfa_planes(mosaic, cfa)
    greens = [p for p, c in zip(planes, colors) if c == "G"]
    return 0.5 * (greens[0] + greens[1])


# ----------------------------------------------------------------------------
# Gaussian pyramids
# ----------------------------------------------------------------------------

def pyr_down(image: np.ndarray) -> np.ndarray:
    """Binomial 5-tap blur (symmetric borders) followed by 2x decimation."""
    low = ndimage.correlate1d(image, _PYR_KERNEL, axis=0, mode="reflect")
    low = ndimage.correlate1d(low, _PYR_KERNEL, axis=1, mode="reflect")
    return low[::2, ::2]


def build_pyramid(image: LinearImage, levels: int = 4):
    """Gaussian pyramid; level 0 is the input, each level halves per axis."""
    if levels < 1:
        raise InputError("pyramid needs at least one level")
    min_dim = min(image.height, image.width)
    if min_dim < 2 ** (levels - 1):
        raise InputError(
            f"image {image.width}x{image.height} too small for {levels} pyramid levels"
        )
    pyr = [image]
    arr = image.samples
    for _ in range(1, levels):
        arr = pyr_down(arr)
        pyr.append(LinearImage(arr))
    return pyr
