"""Sensor-to-canonical chroma calibration.

A smooth invertible warp of log-UV chromaticity is fit to per-unit factory
calibration points by regularized RBF interpolation with a Gaussian kernel;
the inverse map is solved on demand with Gauss-Newton.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import InputError, NumericError


@dataclass(frozen=True)
class CalibrationMap:
    """RBF warp y = theta^T phi(x, X, sigma)^T + x between log-UV spaces."""

    X: np.ndarray       # (2, n) sensor-space calibration points
    Y: np.ndarray       # (2, n) canonical-space counterparts
    theta: np.ndarray   # (n, 2)
    sigma: float = 0.3
    lam: float = 0.1


def _affinity(a: np.ndarray, b: np.ndarray, sigma: float) -> np.ndarray:
    """Row-normalized Gaussian affinities between columns of a and b."""
    d2 = ((a.T[:, None, :] - b.T[None, :, :]) ** 2).sum(-1)
    k = np.exp(-d2 / (2.0 * sigma * sigma))
    return k / k.sum(axis=1, keepdims=True)


def rbf_fit(X, Y, sigma: float = 0.3, lam: float = 0.1) -> CalibrationMap:
    """Solve the stacked regularized least squares [phi; lam*I] theta = [Y-X; 0]."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != 2:
        raise InputError("calibration points must be matching (2, n) matrices")
    n = X.shape[1]
    if n < 3:
        raise InputError("calibration needs at least 3 point pairs")
    d2 = ((X.T[:, None, :] - X.T[None, :, :]) ** 2).sum(-1)
    if np.any(d2[~np.eye(n, dtype=bool)] < 1e-12):
        warnings.warn("duplicate calibration points; warp may be ill-conditioned")

    phi = _affinity(X, X, sigma)
    lhs = np.vstack([phi, lam * np.eye(n)])
    rhs = np.vstack([(Y - X).T, np.zeros((n, 2))])
    theta, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    return CalibrationMap(X=X, Y=Y, theta=theta, sigma=sigma, lam=lam)


def identity_calibration() -> CalibrationMap:
    """Warp that maps every chroma to itself (theta fitted to Y = X)."""
    grid = np.linspace(-1.0, 1.0, 3)
    X = np.array(np.meshgrid(grid, grid)).reshape(2, -1)
    return rbf_fit(X, X)


def rbf_forward(cmap: CalibrationMap, x) -> np.ndarray:
    """Warp log-UV point(s) from sensor to canonical space.

    Accepts a single (2,) point or an (m, 2) batch.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    phi = _affinity(pts.T, cmap.X, cmap.sigma)
    out = phi @ cmap.theta + pts
    return out[0] if np.asarray(x).ndim == 1 else out


def rbf_inverse(cmap: CalibrationMap, y, tol: float = 1e-10,
                max_iter: int = 10, return_iterations: bool = False):
    """Invert the warp by Gauss-Newton on ||forward(x) - y||^2, seeded at y.

    The Jacobian is estimated by central finite differences. Raises
    `NumericError`, reporting the iteration count, if the residual does not
    drop below `tol`.
    """
    y = np.asarray(y, dtype=np.float64)
    x = y.copy()
    h = 1e-6
    for it in range(1, max_iter + 1):
        res = rbf_forward(cmap, x) - y
        if np.linalg.norm(res) <= tol:
            return (x, it - 1) if return_iterations else x
        jac = np.empty((2, 2))
        for j in range(2):
            step = np.zeros(2)
            step[j] = h
            jac[:, j] = (rbf_forward(cmap, x + step) - rbf_forward(cmap, x - step)) / (2 * h)
        try:
            delta = np.linalg.solve(jac.T @ jac, jac.T @ res)
        except np.linalg.LinAlgError:
            raise NumericError("singular Jacobian while inverting the chroma warp") from None
        x = x - delta
    res = np.linalg.norm(rbf_forward(cmap, x) - y)
    if res <= tol:
        return (x, max_iter) if return_iterations else x
    raise NumericError(
        f"chroma warp inversion did not converge after {max_iter} iterations "
        f"(residual {res:.3e})"
    )


def save_calibration(path: str, cmap: CalibrationMap) -> None:
    with open(path, "w") as f:
        json.dump(
            {
                "sigma": cmap.sigma,
                "lambda": cmap.lam,
                "X": cmap.X.tolist(),
                "Y": cmap.Y.tolist(),
            },
            f,
            indent=2,
        )


def load_calibration(path: str) -> CalibrationMap:
    with open(path) as f:
        doc = json.load(f)
    return rbf_fit(
        np.array(doc["X"]), np.array(doc["Y"]),
        sigma=doc.get("sigma", 0.3), lam=doc.get("lambda", 0.1),
    )
