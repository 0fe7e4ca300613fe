"""White-balance error metrics and their gradients.

All three metrics are in degrees, non-negative, and invariant to positive
rescaling of either illuminant. The anisotropic reproduction error weights
channel errors by the mean color of the true white-balanced image, so a
channel that is absent from the scene contributes nothing.
"""

from __future__ import annotations

import numpy as np

from ..errors import InputError

_RAD2DEG = 180.0 / np.pi
_Q_CLIP = 1.0 - 1e-12


def _check_positive(v, name: str):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,):
        raise InputError(f"{name} must be an RGB 3-vector")
    if np.any(v <= 0):
        raise InputError(f"{name} must have strictly positive entries")
    return v


def angular_error(predicted, true) -> float:
    """Angle between the two illuminant RGB vectors, degrees."""
    lp = _check_positive(predicted, "predicted illuminant")
    lt = _check_positive(true, "true illuminant")
    q = np.dot(lp, lt) / (np.linalg.norm(lp) * np.linalg.norm(lt))
    return float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))


def reproduction_error(predicted, true) -> float:
    """Angle of the white-patch rendition r = true/predicted from neutral."""
    lp = _check_positive(predicted, "predicted illuminant")
    lt = _check_positive(true, "true illuminant")
    r = lt / lp
    q = np.sum(r) / (np.sqrt(3.0) * np.linalg.norm(r))
    return float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))


def anisotropic_reproduction_error(predicted, true, mean_true) -> float:
    """Reproduction error in a space scaled by the true image's mean color.

    With H = diag(mean_true)^2 and r = true/predicted:
        arccos( sqrt(r)^T H sqrt(r) / (sqrt(tr H) * sqrt(r^T H r)) )
    Degenerates to the plain reproduction error when mean_true is gray, and
    to zero when two channels are absent.
    """
    lp = _check_positive(predicted, "predicted illuminant")
    lt = _check_positive(true, "true illuminant")
    mu = np.asarray(mean_true, dtype=np.float64)
    if mu.shape != (3,) or np.any(mu < 0):
        raise InputError("mean_true must be a non-negative RGB 3-vector")
    h = mu * mu
    tr = h.sum()
    if tr <= 0:
        raise InputError("mean_true must not be the zero vector")
    r = lt / lp
    num = np.dot(h, r)
    den = np.sqrt(tr) * np.sqrt(np.dot(h, r * r))
    q = num / den
    return float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))


# ----------------------------------------------------------------------------
# Gradients with respect to the predicted illuminant (used as training losses)
# ----------------------------------------------------------------------------

def _arccos_grad(q: float) -> float:
    q = float(np.clip(q, -_Q_CLIP, _Q_CLIP))
    return -_RAD2DEG / np.sqrt(1.0 - q * q)


def angular_error_grad(lp, lt):
    """Returns (error_deg, d(error)/d(lp))."""
    lp = np.asarray(lp, dtype=np.float64)
    lt = np.asarray(lt, dtype=np.float64)
    np_ = np.linalg.norm(lp)
    nt = np.linalg.norm(lt)
    q = np.dot(lp, lt) / (np_ * nt)
    dq = lt / (np_ * nt) - q * lp / (np_ * np_)
    err = float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))
    return err, _arccos_grad(q) * dq


def reproduction_error_grad(lp, lt):
    lp = np.asarray(lp, dtype=np.float64)
    lt = np.asarray(lt, dtype=np.float64)
    r = lt / lp
    nr = np.linalg.norm(r)
    q = r.sum() / (np.sqrt(3.0) * nr)
    dq_dr = (nr * nr - r.sum() * r) / (np.sqrt(3.0) * nr ** 3)
    dr_dlp = -lt / (lp * lp)
    err = float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))
    return err, _arccos_grad(q) * dq_dr * dr_dlp


def are_grad(lp, lt, mu):
    lp = np.asarray(lp, dtype=np.float64)
    lt = np.asarray(lt, dtype=np.float64)
    h = np.asarray(mu, dtype=np.float64) ** 2
    r = lt / lp
    tr = h.sum()
    hr2 = np.dot(h, r * r)
    num = np.dot(h, r)
    den = np.sqrt(tr) * np.sqrt(hr2)
    q = num / den
    dq_dr = h / den - q * h * r / hr2
    dr_dlp = -lt / (lp * lp)
    err = float(np.degrees(np.arccos(np.clip(q, -1.0, 1.0))))
    return err, _arccos_grad(q) * dq_dr * dr_dlp
