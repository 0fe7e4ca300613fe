"""Trainable log-chroma histogram illuminant estimator.

The model scores every candidate illuminant chroma by circularly correlating
learned filters with the image's pixel/edge chroma histograms, plus a
learned bias map. Four filter/bias sets conditioned on scene log-brightness
are blended with piecewise-linear weights, giving roughly separate daylight /
indoor / night / extreme-low-light behavior. The estimate is the
softmax-weighted centroid of the score map; training minimizes a selectable
white-balance error metric by full-batch gradient descent with analytic
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError, NumericError
from . import metrics
from .calibration import CalibrationMap, rbf_forward, rbf_inverse
from .features import (
    N_BINS,
    U_GRID,
    V_GRID,
    log_brightness,
    pixel_edge_histograms,
    warp_thumbnail_chroma,
)

MODEL_VERSION = 1
_N_SETS = 4
_L_PERCENTILES = (12.5, 37.5, 62.5, 87.5)


@dataclass(frozen=True)
class IlluminantEstimate:
    """Illuminant RGB color; only chromaticity is meaningful."""

    rgb: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.rgb) <= 0):
            raise InputError("illuminant entries must be positive")

    def gains(self) -> np.ndarray:
        """Green-normalized white-balance gains 1/rgb."""
        g = self.rgb[1] / np.asarray(self.rgb, dtype=np.float64)
        return g


@dataclass
class TrainConfig:
    loss: str = "are"              # angular | reproduction | are | von-mises
    iterations: int = 160
    learning_rate: float = 0.1
    regularization: float = 1e-4
    beta_scale: float = 4.0        # softmax sharpness = beta_scale / std(score)
    von_mises_sigma: float = 0.25  # uv scale of the wrapped-Gaussian loss
    use_face_channels: bool = False
    min_examples: int = 50


@dataclass
class ChromaHistogramModel:
    filters: np.ndarray            # (4, C, N_BINS, N_BINS)
    biases: np.ndarray             # (4, N_BINS, N_BINS)
    l_centers: np.ndarray          # (4,) log-brightness bin centers
    beta_scale: float = 4.0
    trained: bool = False
    version: int = MODEL_VERSION

    @property
    def n_channels(self) -> int:
        return self.filters.shape[1]


def blank_model(n_channels: int = 2, beta_scale: float = 4.0) -> ChromaHistogramModel:
    return ChromaHistogramModel(
        filters=np.zeros((_N_SETS, n_channels, N_BINS, N_BINS)),
        biases=np.zeros((_N_SETS, N_BINS, N_BINS)),
        l_centers=np.linspace(-6.0, 0.0, _N_SETS),
        beta_scale=beta_scale,
    )


def _hat_weights(l_values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation weights of L into the set centers."""
    l_values = np.atleast_1d(l_values)
    w = np.zeros((len(l_values), _N_SETS))
    for n, l in enumerate(l_values):
        if l <= centers[0]:
            w[n, 0] = 1.0
        elif l >= centers[-1]:
            w[n, -1] = 1.0
        else:
            k = int(np.searchsorted(centers, l) - 1)
            t = (l - centers[k]) / (centers[k + 1] - centers[k])
            w[n, k] = 1.0 - t
            w[n, k + 1] = t
    return w


def _softargmax(scores: np.ndarray, beta_scale: float):
    """Softmax-weighted centroid per score map; returns (u, v, prob, beta, std)."""
    flat = scores.reshape(scores.shape[0], -1)
    std = np.maximum(flat.std(axis=1), 1e-9)
    beta = beta_scale / std
    z = beta[:, None] * flat
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    prob = (e / e.sum(axis=1, keepdims=True)).reshape(scores.shape)
    u = (prob * U_GRID).sum(axis=(1, 2))
    v = (prob * V_GRID).sum(axis=(1, 2))
    return u, v, prob, beta, std


def _forward_scores(filters, biases, fft_hists, alphas):
    """Score maps for a batch: correlation of blended filters with histograms
    plus the blended bias."""
    f_eff = np.einsum("nk,kcij->ncij", alphas, filters)
    b_eff = np.einsum("nk,kij->nij", alphas, biases)
    prod = (fft_hists * np.conj(np.fft.rfft2(f_eff))).sum(axis=1)
    return np.fft.irfft2(prod, s=(N_BINS, N_BINS)) + b_eff


def _loss_grad_uv(loss: str, u, v, lt, mu, cfg: TrainConfig):
    """Per-example loss value and gradient w.r.t. the predicted (u, v)."""
    if loss == "von-mises":
        # Wrapped-Gaussian negative log-likelihood in uv space (experimental).
        ut = np.log(lt[1] / lt[0])
        vt = np.log(lt[1] / lt[2])
        s2 = cfg.von_mises_sigma ** 2
        err = 0.5 * ((u - ut) ** 2 + (v - vt) ** 2) / s2
        return float(err), (u - ut) / s2, (v - vt) / s2

    lp = np.array([np.exp(-u), 1.0, np.exp(-v)])
    if loss == "angular":
        err, dlp = metrics.angular_error_grad(lp, lt)
    elif loss == "reproduction":
        err, dlp = metrics.reproduction_error_grad(lp, lt)
    elif loss == "are":
        err, dlp = metrics.are_grad(lp, lt, mu)
    else:
        raise InputError(f"unknown loss {loss!r}")
    return err, float(dlp[0] * -lp[0]), float(dlp[2] * -lp[2])


def _prepare_features(dataset, use_face: bool):
    hists = []
    l_values = []
    for ex in dataset:
        h = pixel_edge_histograms(ex.thumbnail)
        if use_face:
            mask = ex.face_mask if ex.face_mask is not None else np.zeros(
                ex.thumbnail.shape[:2], dtype=bool)
            h = np.concatenate([h, pixel_edge_histograms(ex.thumbnail, mask)])
        hists.append(h)
        l_values.append(log_brightness(ex.thumbnail, ex.exposure_time, ex.gain))
    hists = np.stack(hists)
    return {
        "hists": hists,
        "fft_hists": np.fft.rfft2(hists),
        "l_values": np.array(l_values),
        "lt": np.stack([np.asarray(ex.illuminant, dtype=np.float64) for ex in dataset]),
        "mu": np.stack([np.asarray(ex.mean_true, dtype=np.float64) for ex in dataset]),
    }


def _batch_loss_and_grads(filters, biases, feats, alphas, cfg: TrainConfig):
    """Mean loss over the batch plus regularization, with analytic gradients."""
    n = feats["fft_hists"].shape[0]
    scores = _forward_scores(filters, biases, feats["fft_hists"], alphas)
    u, v, prob, beta, std = _softargmax(scores, cfg.beta_scale)

    total = 0.0
    d_scores = np.empty_like(scores)
    n_bins2 = N_BINS * N_BINS
    for i in range(n):
        err, du, dv = _loss_grad_uv(cfg.loss, u[i], v[i], feats["lt"][i],
                                    feats["mu"][i], cfg)
        total += err
        q = du * U_GRID + dv * V_GRID
        p = prob[i]
        dz = p * (q - (p * q).sum())
        s = scores[i]
        s_bar = s.mean()
        # z = beta(S) * S with beta = scale / std(S); the second term carries
        # the dependence of beta on the score statistics.
        d_scores[i] = beta[i] * dz - (dz * s).sum() * beta[i] * (s - s_bar) / (
            n_bins2 * std[i] ** 2)
    total /= n
    d_scores /= n

    d_biases = np.einsum("nk,nij->kij", alphas, d_scores)
    g_fft = np.fft.rfft2(d_scores)
    per_channel = np.fft.irfft2(
        feats["fft_hists"] * np.conj(g_fft[:, None]), s=(N_BINS, N_BINS))
    d_filters = np.einsum("nk,ncij->kcij", alphas, per_channel)

    total += 0.5 * cfg.regularization * (np.sum(filters ** 2) + np.sum(biases ** 2))
    d_filters += cfg.regularization * filters
    d_biases += cfg.regularization * biases
    return total, d_filters, d_biases


def train_model(dataset, loss: str = "are",
                config: TrainConfig | None = None) -> ChromaHistogramModel:
    """Fit the estimator by full-batch Adam on the selected error metric.

    Deterministic: parameters start at zero and there is no sampling, so the
    same dataset and config always produce the same model.
    """
    cfg = config or TrainConfig()
    cfg.loss = loss
    if len(dataset) < cfg.min_examples:
        raise InputError(f"training needs at least {cfg.min_examples} examples")

    feats = _prepare_features(dataset, cfg.use_face_channels)
    l_centers = np.percentile(feats["l_values"], _L_PERCENTILES)
    alphas = _hat_weights(feats["l_values"], l_centers)

    n_channels = feats["hists"].shape[1]
    filters = np.zeros((_N_SETS, n_channels, N_BINS, N_BINS))
    biases = np.zeros((_N_SETS, N_BINS, N_BINS))

    m_f = np.zeros_like(filters); v_f = np.zeros_like(filters)
    m_b = np.zeros_like(biases); v_b = np.zeros_like(biases)
    b1, b2, eps = 0.9, 0.999, 1e-8

    for it in range(1, cfg.iterations + 1):
        loss_val, g_f, g_b = _batch_loss_and_grads(filters, biases, feats, alphas, cfg)
        if not np.isfinite(loss_val):
            raise NumericError(f"non-finite training loss at iteration {it}")
        m_f = b1 * m_f + (1 - b1) * g_f
        v_f = b2 * v_f + (1 - b2) * g_f ** 2
        m_b = b1 * m_b + (1 - b1) * g_b
        v_b = b2 * v_b + (1 - b2) * g_b ** 2
        corr1 = 1 - b1 ** it
        corr2 = 1 - b2 ** it
        filters -= cfg.learning_rate * (m_f / corr1) / (np.sqrt(v_f / corr2) + eps)
        biases -= cfg.learning_rate * (m_b / corr1) / (np.sqrt(v_b / corr2) + eps)

    return ChromaHistogramModel(
        filters=filters,
        biases=biases,
        l_centers=l_centers,
        beta_scale=cfg.beta_scale,
        trained=True,
    )


def predict_uv(model: ChromaHistogramModel, hists: np.ndarray, l_value: float):
    """Canonical-space chroma estimate from precomputed histograms."""
    alphas = _hat_weights(np.array([l_value]), model.l_centers)
    scores = _forward_scores(model.filters, model.biases,
                             np.fft.rfft2(hists[None]), alphas)
    u, v, _, _, _ = _softargmax(scores, model.beta_scale)
    return float(u[0]), float(v[0])


def predict_illuminant(
    model: ChromaHistogramModel,
    thumbnail: np.ndarray,
    exposure_time: float,
    gain: float,
    calibration: CalibrationMap,
    iso_ratio: float = 1.0,
    face_mask: np.ndarray | None = None,
) -> IlluminantEstimate:
    """Estimate the sensor-space illuminant of a linear RGB thumbnail.

    Pixel chromas are warped into the canonical space, scored there, and the
    winning chroma is warped back through the calibration inverse.
    """
    if not model.trained:
        raise InputError("the illuminant model has not been trained")
    warped = warp_thumbnail_chroma(thumbnail, lambda uv: rbf_forward(calibration, uv))
    hists = pixel_edge_histograms(warped)
    if model.n_channels == 4:
        mask = face_mask if face_mask is not None else np.zeros(
            thumbnail.shape[:2], dtype=bool)
        hists = np.concatenate([hists, pixel_edge_histograms(warped, mask)])
    elif model.n_channels != hists.shape[0]:
        raise InputError("model/feature channel mismatch")

    l_value = log_brightness(warped, exposure_time, gain, iso_ratio)
    u, v = predict_uv(model, hists, l_value)
    uv_sensor = rbf_inverse(calibration, np.array([u, v]))
    rgb = np.array([np.exp(-uv_sensor[0]), 1.0, np.exp(-uv_sensor[1])])
    return IlluminantEstimate(rgb=rgb)


# ----------------------------------------------------------------------------
# Evaluation harness and persistence
# ----------------------------------------------------------------------------

def evaluate_model(model: ChromaHistogramModel, dataset, use_face: bool = False):
    """Mean and worst-25% mean of all three metrics over a dataset.

    Predictions run in canonical space (dataset thumbnails are assumed
    already calibrated).
    """
    feats = _prepare_features(dataset, use_face)
    alphas = _hat_weights(feats["l_values"], model.l_centers)
    scores = _forward_scores(model.filters, model.biases, feats["fft_hists"], alphas)
    u, v, _, _, _ = _softargmax(scores, model.beta_scale)

    errs = {"angular": [], "reproduction": [], "are": []}
    for i, ex in enumerate(dataset):
        lp = np.array([np.exp(-u[i]), 1.0, np.exp(-v[i])])
        lt = feats["lt"][i]
        mu = np.maximum(feats["mu"][i], 0.0)
        errs["angular"].append(metrics.angular_error(lp, lt))
        errs["reproduction"].append(metrics.reproduction_error(lp, lt))
        errs["are"].append(metrics.anisotropic_reproduction_error(lp, lt, mu))

    report = {}
    for name, vals in errs.items():
        vals = np.sort(np.asarray(vals))[::-1]
        worst = vals[: max(1, len(vals) // 4)]
        report[name] = {"mean": float(vals.mean()), "worst25": float(worst.mean())}
    return report


def cross_validate(dataset, losses=("von-mises", "reproduction", "angular", "are"),
                   folds: int = 3, config: TrainConfig | None = None):
    """K-fold harness: train each loss on k-1 folds, evaluate on the held-out
    fold, and aggregate the three metrics across all validation examples."""
    idx = np.arange(len(dataset))
    fold_of = idx % folds
    results = {}
    for loss in losses:
        per_metric = {"angular": [], "reproduction": [], "are": []}
        for k in range(folds):
            train_set = [dataset[i] for i in idx[fold_of != k]]
            val_set = [dataset[i] for i in idx[fold_of == k]]
            cfg = TrainConfig(**{**(config.__dict__ if config else TrainConfig().__dict__)})
            model = train_model(train_set, loss=loss, config=cfg)
            feats = _prepare_features(val_set, cfg.use_face_channels)
            alphas = _hat_weights(feats["l_values"], model.l_centers)
            scores = _forward_scores(model.filters, model.biases,
                                     feats["fft_hists"], alphas)
            u, v, _, _, _ = _softargmax(scores, model.beta_scale)
            for i in range(len(val_set)):
                lp = np.array([np.exp(-u[i]), 1.0, np.exp(-v[i])])
                lt = feats["lt"][i]
                mu = np.maximum(feats["mu"][i], 0.0)
                per_metric["angular"].append(metrics.angular_error(lp, lt))
                per_metric["reproduction"].append(metrics.reproduction_error(lp, lt))
                per_metric["are"].append(
                    metrics.anisotropic_reproduction_error(lp, lt, mu))
        results[loss] = {}
        for name, vals in per_metric.items():
            vals = np.sort(np.asarray(vals))[::-1]
            worst = vals[: max(1, len(vals) // 4)]
            results[loss][name] = {
                "mean": float(vals.mean()),
                "worst25": float(worst.mean()),
            }
    return results


def save_model(path: str, model: ChromaHistogramModel) -> None:
    np.savez(
        path,
        version=np.array([model.version]),
        filters=model.filters,
        biases=model.biases,
        l_centers=model.l_centers,
        beta_scale=np.array([model.beta_scale]),
        trained=np.array([int(model.trained)]),
    )


def load_model(path: str) -> ChromaHistogramModel:
    with np.load(path) as data:
        version = int(data["version"][0])
        if version != MODEL_VERSION:
            raise InputError(f"unsupported model version {version}")
        return ChromaHistogramModel(
            filters=data["filters"],
            biases=data["biases"],
            l_centers=data["l_centers"],
            beta_scale=float(data["beta_scale"][0]),
            trained=bool(data["trained"][0]),
        )
