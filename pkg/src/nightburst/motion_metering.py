"""Pre-capture motion metering.

Estimates per-pixel optical-flow magnitude between successive metering
frames, aggregates it to a scalar per pair, models the recent history with a
three-component Gaussian mixture, predicts the minimum motion expected over
the reference-selection pool of the upcoming burst, and combines that with
gyro-based stability detection to pick exposure time, gain, and frame count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal as sp_signal
from scipy.special import ndtr

from .errors import InputError
from .raw_model import GyroTrace, LinearImage, NoiseModel


@dataclass(frozen=True)
class MeteringParams:
    """Tuning knobs for the metering subsystem; defaults match production use."""

    noise_mask_k: float = 2.5          # gradient mask threshold, in sigmas
    blur_budget_b: float = 3.0         # allowed blur, pixels per frame
    p_conf: float = 0.9                # confidence for the min-motion bound
    history_len_n: int = 10            # motion samples kept before shutter
    reference_pool_k: int = 4          # frames considered for reference pick
    max_exposure_handheld: float = 0.333
    max_exposure_stable: float = 1.0
    total_capture_budget: float = 6.0
    max_frames: int = 13
    gain_max: float = 96.0
    stability_threshold: float = 0.006   # rad/s
    stability_window_t0: float = 1.466   # seconds before shutter
    stability_window_t1: float = 0.400   # masked interval next to shutter
    metering_interval_s: float = 1.0 / 30.0
    field_rows: int = 12
    field_cols: int = 16
    gmm_variance_floor: float = 0.05 ** 2
    gmm_weight_floor: float = 1e-3

    def __post_init__(self):
        if not 0 < self.p_conf < 1:
            raise InputError("p_conf must be in (0, 1)")
        if self.blur_budget_b <= 0:
            raise InputError("blur budget must be positive")
        if self.max_exposure_handheld > self.max_exposure_stable:
            raise InputError("handheld exposure cap cannot exceed the stable cap")


@dataclass(frozen=True)
class MotionField:
    """Grid of flow-magnitude lower bounds with a validity mask."""

    magnitudes: np.ndarray  # (H, W) pixels of motion per frame interval
    valid: np.ndarray       # (H, W) bool

    def __post_init__(self):
        if self.magnitudes.shape != self.valid.shape:
            raise InputError("magnitude and validity grids must match")


@dataclass(frozen=True)
class MotionSample:
    """Weighted scalar aggregate of one refined motion field."""

    value: float
    no_signal: bool = False


@dataclass(frozen=True)
class Gmm:
    """Three-component 1-D Gaussian mixture over motion magnitudes."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.variances)):
            raise InputError("mixture parameter lengths differ")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-6:
            raise InputError("mixture weights must be non-negative and sum to 1")
        if np.any(self.variances < 1e-12):
            raise InputError("mixture variances must stay above the numeric floor")

    def cdf(self, v):
        v = np.asarray(v, dtype=np.float64)
        z = (v[..., None] - self.means) / np.sqrt(self.variances)
        return np.dot(ndtr(z), self.weights)

    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    def variance(self) -> float:
        second = np.dot(self.weights, self.variances + self.means ** 2)
        return float(second - self.mean() ** 2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        return rng.normal(self.means[comp], np.sqrt(self.variances[comp]))


@dataclass(frozen=True)
class StabilityResult:
    stabilized: bool
    avg_speed: float
    sufficient_coverage: bool


@dataclass(frozen=True)
class ExposureSchedule:
    """Factorizes a target sensitivity into (exposure_time, gain).

    Three regimes: exposure-only up to the blur-limited knee, gain-only up to
    `gain_max`, then exposure and gain rising together until the stability
    cap. Beyond cap x gain_max the request cannot be met and the result is
    flagged as clamped.
    """

    blur_limited_exposure: float
    stability_cap: float
    gain_max: float = 96.0

    @property
    def knee(self) -> float:
        return min(self.blur_limited_exposure, self.stability_cap)

    def split(self, sensitivity: float):
        """Returns (exposure_time, gain, clamped)."""
        if sensitivity <= 0:
            raise InputError("target sensitivity must be positive")
        t_exp = min(self.knee, sensitivity)
        gain = sensitivity / t_exp
        if gain <= self.gain_max:
            return t_exp, max(1.0, gain), False
        t_exp = min(self.stability_cap, sensitivity / self.gain_max)
        gain = min(self.gain_max, sensitivity / t_exp)
        clamped = t_exp * gain < sensitivity * (1 - 1e-12)
        return t_exp, gain, clamped


@dataclass(frozen=True)
class CapturePlan:
    exposure_time: float
    gain: float
    frame_count: int
    stabilized: bool
    predicted_v_min: float
    sensitivity_clamped: bool = False


# ----------------------------------------------------------------------------
# Flow magnitude estimation
# ----------------------------------------------------------------------------

def bounded_flow(
    prev: LinearImage,
    curr: LinearImage,
    noise: NoiseModel,
    params: MeteringParams = MeteringParams(),
) -> MotionField:
    """Direct per-pixel lower bound on flow magnitude: |dI/dt| / ||grad I||.

    The bound is tight where motion is parallel to the local gradient.
    Pixels whose gradient norm falls below `noise_mask_k` times the local
    noise standard deviation are masked out as unreliable.
    """
    if prev.samples.shape != curr.samples.shape or prev.channels != 1:
        raise InputError("bounded_flow needs two grayscale images of equal size")

    a = prev.samples
    dt = curr.samples - a
    gy, gx = np.gradient(a)
    gnorm = np.hypot(gx, gy)

    sigma = noise.sigma(a)
    valid = gnorm >= params.noise_mask_k * sigma

    mag = np.zeros_like(a)
    np.divide(np.abs(dt), gnorm, out=mag, where=gnorm > 0)
    mag[~valid] = 0.0
    return MotionField(mag, valid)


def refine_field(
    field: MotionField, rows: int = 12, cols: int = 16
) -> MotionField:
    """Downsample with outlier rejection: 90th-percentile motion per bin.

    The percentile is nearest-rank (ceil(0.9 n)); bins with no valid input
    become invalid.
    """
    h, w = field.magnitudes.shape
    row_edges = np.linspace(0, h, rows + 1).astype(int)
    col_edges = np.linspace(0, w, cols + 1).astype(int)
    out = np.zeros((rows, cols))
    out_valid = np.zeros((rows, cols), dtype=bool)
    for i in range(rows):
        for j in range(cols):
            block_mag = field.magnitudes[row_edges[i]:row_edges[i + 1],
                                         col_edges[j]:col_edges[j + 1]]
            block_ok = field.valid[row_edges[i]:row_edges[i + 1],
                                   col_edges[j]:col_edges[j + 1]]
            vals = block_mag[block_ok]
            if vals.size == 0:
                continue
            rank = math.ceil(0.9 * vals.size)
            out[i, j] = np.partition(vals, rank - 1)[rank - 1]
            out_valid[i, j] = True
    return MotionField(out, out_valid)


def center_weights(rows: int = 12, cols: int = 16) -> np.ndarray:
    """Default center-weighted map: 2-D Gaussian, sigma = field width / 4."""
    sig = cols / 4.0
    y = np.arange(rows) - (rows - 1) / 2.0
    x = np.arange(cols) - (cols - 1) / 2.0
    return np.exp(-(y[:, None] ** 2 + x[None, :] ** 2) / (2 * sig ** 2))


def weighted_average(field: MotionField, weights: np.ndarray | None = None) -> MotionSample:
    """Aggregate a refined field into one scalar; invalid bins are skipped."""
    if weights is None:
        weights = center_weights(*field.magnitudes.shape)
    if weights.shape != field.magnitudes.shape:
        raise InputError("weight map shape must match the motion field")
    if np.any(weights < 0):
        raise InputError("weights must be non-negative")
    if not np.any(weights > 0):
        raise InputError("weight map is all zero")
    w = np.where(field.valid, weights, 0.0)
    total = w.sum()
    if total == 0:
        return MotionSample(0.0, no_signal=True)
    return MotionSample(float((w * field.magnitudes).sum() / total))


# ----------------------------------------------------------------------------
# Mixture fitting and motion prediction
# ----------------------------------------------------------------------------

def _em_once(x: np.ndarray, mu0: np.ndarray, params: MeteringParams):
    n_comp = len(mu0)
    w = np.full(n_comp, 1.0 / n_comp)
    mu = mu0.copy()
    var = np.full(n_comp, max(np.var(x), params.gmm_variance_floor))
    prev_ll = -np.inf
    for _ in range(100):
        # E-step: responsibilities under the current mixture.
        diff = x[:, None] - mu
        log_pdf = -0.5 * (diff ** 2 / var + np.log(2 * np.pi * var))
        log_w = np.log(w)
        joint = log_pdf + log_w
        m = joint.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(joint - m).sum(axis=1))
        resp = np.exp(joint - lse[:, None])
        ll = lse.sum()

        # M-step with weight and variance floors for degenerate clusters.
        nk = resp.sum(axis=0)
        w = np.maximum(nk / len(x), params.gmm_weight_floor)
        w /= w.sum()
        safe_nk = np.maximum(nk, 1e-12)
        mu = resp.T @ x / safe_nk
        var = np.maximum(
            (resp * (x[:, None] - mu) ** 2).sum(axis=0) / safe_nk,
            params.gmm_variance_floor,
        )
        if abs(ll - prev_ll) < 1e-6:
            break
        prev_ll = ll
    return Gmm(w, mu, var), ll


def fit_gmm(samples, params: MeteringParams = MeteringParams()) -> Gmm:
    """Fit the 3-component mixture by EM with quantile seeding and restarts."""
    x = np.array([s.value if isinstance(s, MotionSample) else float(s) for s in samples],
                 dtype=np.float64)
    if x.size == 0:
        raise InputError("cannot fit a mixture to zero samples")
    while x.size < 3:
        x = np.concatenate([x, x])

    best = None
    best_ll = -np.inf
    rng = np.random.default_rng(0)
    for restart in range(3):
        if restart == 0:
            mu0 = np.quantile(x, [1 / 6, 3 / 6, 5 / 6])
        else:
            mu0 = np.quantile(x, np.sort(rng.uniform(0.05, 0.95, size=3)))
        gmm, ll = _em_once(x, mu0, params)
        if ll > best_ll:
            best, best_ll = gmm, ll
    return best


def predict_min_motion(gmm: Gmm, k: int, p_conf: float) -> float:
    """Upper bound on the minimum motion over the next k frames.

    Returns the smallest v such that 1 - (1 - F(v))^k >= p_conf, where F is
    the mixture CDF; solved by binary search since the left side is monotone
    in v.
    """
    if k < 1:
        raise InputError("reference pool size must be >= 1")
    sigma = np.sqrt(gmm.variances)
    hi = float(max(np.max(gmm.means + 8 * sigma), 1e-6))
    lo = 0.0
    if 1 - (1 - gmm.cdf(hi)) ** k < p_conf:
        return hi

    def satisfied(v):
        return 1 - (1 - float(gmm.cdf(v))) ** k >= p_conf

    while hi - lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if satisfied(mid):
            hi = mid
        else:
            lo = mid
    return hi


def mean_filter_predict(history, n: int = 5) -> float:
    """Baseline predictor: average of the last n motion samples."""
    x = np.asarray(history, dtype=np.float64)
    return float(x[-n:].mean())


def fir_taps(num_taps: int = 8, cutoff: float = 0.01) -> np.ndarray:
    """Hamming-window lowpass FIR, cutoff in units of the Nyquist rate."""
    return sp_signal.firwin(num_taps, cutoff)


def fir_filter_predict(history, taps: np.ndarray | None = None) -> float:
    """Baseline predictor: FIR filter output at the newest sample."""
    if taps is None:
        taps = fir_taps()
    x = np.asarray(history, dtype=np.float64)
    if x.size < len(taps):
        x = np.concatenate([np.full(len(taps) - x.size, x[0]), x])
    return float(np.dot(taps, x[-len(taps):][::-1]))


# ----------------------------------------------------------------------------
# Stability detection and capture planning
# ----------------------------------------------------------------------------

def detect_stability(
    gyro: GyroTrace | None,
    shutter_time: float | None = None,
    params: MeteringParams = MeteringParams(),
) -> StabilityResult:
    """Classify the camera as stabilized from pre-shutter gyro readings.

    Angular speeds are averaged over [shutter - t0, shutter - t1]; the t1
    interval next to the shutter press is masked out because button-press
    vibration would otherwise dominate. Missing or non-covering traces are
    conservatively treated as handheld.
    """
    if gyro is None or len(gyro.samples) == 0:
        return StabilityResult(False, float("nan"), False)
    t = gyro.samples[:, 0]
    if shutter_time is None:
        shutter_time = float(t[-1])
    lo = shutter_time - params.stability_window_t0
    hi = shutter_time - params.stability_window_t1
    in_window = (t >= lo) & (t <= hi)
    if not np.any(in_window):
        return StabilityResult(False, float("nan"), False)
    avg = float(gyro.speeds()[in_window].mean())
    return StabilityResult(avg < params.stability_threshold, avg, True)


def plan_capture(
    gmm: Gmm | None,
    gyro: GyroTrace | None,
    target_sensitivity: float,
    params: MeteringParams = MeteringParams(),
    shutter_time: float | None = None,
) -> CapturePlan:
    """Turn predicted motion and stability into concrete burst settings.

    The blur-limiting exposure time keeps predicted blur under the budget B
    (motion is measured in pixels per metering interval); when there is no
    usable motion signal the stability cap applies directly.
    """
    stability = detect_stability(gyro, shutter_time, params)
    cap = params.max_exposure_stable if stability.stabilized else params.max_exposure_handheld

    if gmm is None:
        v_min = 0.0
    else:
        v_min = predict_min_motion(gmm, params.reference_pool_k, params.p_conf)
    if v_min <= 1e-9:
        t_blur = cap
    else:
        t_blur = (params.blur_budget_b / v_min) * params.metering_interval_s

    schedule = ExposureSchedule(
        blur_limited_exposure=t_blur,
        stability_cap=cap,
        gain_max=params.gain_max,
    )
    t_exp, gain, clamped = schedule.split(target_sensitivity)
    frame_count = max(1, min(params.max_frames,
                             int(params.total_capture_budget / t_exp)))
    return CapturePlan(
        exposure_time=t_exp,
        gain=gain,
        frame_count=frame_count,
        stabilized=stability.stabilized,
        predicted_v_min=max(0.0, v_min),
        sensitivity_clamped=clamped,
    )
