import numpy as np
import pytest

from nightburst.awb.calibration import (
    _affinity,
    identity_calibration,
    load_calibration,
    rbf_fit,
    rbf_forward,
    rbf_inverse,
    save_calibration,
)
from nightburst.errors import InputError


def grid_points(n_side=3, span=1.0):
    g = np.linspace(-span, span, n_side)
    return np.array(np.meshgrid(g, g)).reshape(2, -1)


def normal_equations_oracle(X, Y, sigma=0.3, lam=0.1):
    """Independent solution of the same regularized least squares."""
    phi = _affinity(X, X, sigma)
    rhs = (Y - X).T
    return np.linalg.solve(phi.T @ phi + lam * lam * np.eye(X.shape[1]),
                           phi.T @ rhs)


class TestRbfFit:
    def test_identity_data_gives_zero_coefficients(self):
        X = grid_points()
        cmap = rbf_fit(X, X)
        assert np.max(np.abs(cmap.theta)) <= 1e-8
        pts = X.T
        assert np.max(np.abs(rbf_forward(cmap, pts) - pts)) <= 1e-8

    def test_constant_offset_matches_dense_oracle(self):
        X = grid_points()
        offset = np.array([[0.2], [-0.1]])
        Y = X + offset
        cmap = rbf_fit(X, Y)
        theta_oracle = normal_equations_oracle(X, Y)
        assert np.allclose(cmap.theta, theta_oracle, atol=1e-8)
        got = rbf_forward(cmap, X.T)
        # lambda-regularized shrinkage keeps the fit near but not exactly on Y
        assert np.max(np.abs(got - Y.T)) < 0.01

    def test_random_smooth_warp_matches_oracle(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, (2, 8))
        Y = X + 0.1 * np.sin(2 * X[::-1]) + rng.normal(0, 0.02, X.shape)
        cmap = rbf_fit(X, Y)
        assert np.allclose(cmap.theta, normal_equations_oracle(X, Y), atol=1e-8)

    def test_too_few_points_rejected(self):
        with pytest.raises(InputError):
            rbf_fit(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_duplicate_points_warn(self):
        X = grid_points()
        X[:, 1] = X[:, 0]
        with pytest.warns(UserWarning, match="duplicate"):
            rbf_fit(X, X)


class TestForwardInverse:
    def _two_sensor_style_warp(self, n=16, seed=8):
        # Smooth warp resembling cross-sensor white-point shifts.
        rng = np.random.default_rng(seed)
        X = rng.uniform(-1.2, 1.2, (2, n))
        Y = X + np.stack([0.15 * np.tanh(X[1]), -0.12 * np.tanh(X[0])])
        return rbf_fit(X, Y)

    def test_identity_map_forward(self):
        cmap = identity_calibration()
        pts = np.array([[0.3, -0.7], [0.0, 0.0], [1.0, 0.4]])
        assert np.allclose(rbf_forward(cmap, pts), pts, atol=1e-8)

    def test_round_trip_within_1e8(self):
        cmap = self._two_sensor_style_warp()
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.uniform(-1.0, 1.0, 2)
            y = rbf_forward(cmap, x)
            back = rbf_inverse(cmap, y)
            assert np.linalg.norm(back - x) <= 1e-8

    def test_gauss_newton_converges_in_four_iterations(self):
        for n in (8, 16, 24):
            cmap = self._two_sensor_style_warp(n=n, seed=n)
            rng = np.random.default_rng(n + 1)
            for _ in range(10):
                x = rng.uniform(-1.0, 1.0, 2)
                y = rbf_forward(cmap, x)
                _, iters = rbf_inverse(cmap, y, return_iterations=True)
                assert iters <= 4

    def test_batch_forward_matches_single(self):
        cmap = self._two_sensor_style_warp()
        pts = np.random.default_rng(10).uniform(-1, 1, (5, 2))
        batch = rbf_forward(cmap, pts)
        for i in range(5):
            assert np.allclose(batch[i], rbf_forward(cmap, pts[i]), atol=1e-12)


class TestPersistence:
    def test_json_round_trip(self, tmp_path):
        cmap = rbf_fit(grid_points(), grid_points() * 1.1)
        path = str(tmp_path / "calib.json")
        save_calibration(path, cmap)
        loaded = load_calibration(path)
        pts = np.array([[0.2, 0.3], [-0.5, 0.1]])
        assert np.allclose(rbf_forward(loaded, pts), rbf_forward(cmap, pts),
                           atol=1e-12)
