from itertools import combinations

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import nnls as scipy_nnls

import modules.nmf.nnls as nnls_module
from modules.errors import ShapeError
from modules.nmf.nnls import nnls, nnls_columns, nnls_rows


def _enumerate_active_sets(A: np.ndarray, b: np.ndarray) -> float:
    """Best objective over every passive set whose least-squares solution is feasible."""
    k = A.shape[1]
    best = float(np.linalg.norm(b))
    for size in range(1, k + 1):
        for passive in combinations(range(k), size):
            cols = list(passive)
            s = np.linalg.lstsq(A[:, cols], b, rcond=None)[0]
            if np.all(s >= 0.0):
                best = min(best, float(np.linalg.norm(A[:, cols] @ s - b)))
    return best


def _instances(count=40, seed=0):
    gen = np.random.default_rng(seed)
    for _ in range(count):
        k = int(gen.integers(1, 9))
        m = int(gen.integers(k, 12))
        yield gen.normal(size=(m, k)), gen.normal(size=m)


class TestNnls:
    def test_matches_exhaustive_enumeration(self):
        for A, b in _instances():
            result = nnls(A, b)
            assert result.converged
            assert result.residual_norm <= _enumerate_active_sets(A, b) + 1e-8

    def test_kkt_certificate(self):
        for A, b in _instances(seed=1):
            x = nnls(A, b).x
            grad = A.T @ (A @ x - b)
            assert np.all(x >= 0.0)
            assert np.all(grad[x == 0.0] >= -1e-8)
            assert np.all(np.abs(grad[x > 0.0]) <= 1e-8)

    def test_agrees_with_scipy(self):
        for A, b in _instances(seed=2):
            expected, norm = scipy_nnls(A, b)
            assert nnls(A, b).residual_norm == pytest.approx(norm, abs=1e-8)

    def test_exact_representation_is_recovered(self):
        gen = np.random.default_rng(3)
        M = np.abs(gen.normal(size=(10, 4)))
        s0 = np.array([0.0, 1.5, 0.2, 0.0])
        assert_allclose(nnls(M, M @ s0).x, s0, atol=1e-8)

    def test_all_negative_target_gives_zero(self):
        result = nnls(np.eye(3), -np.ones(3))
        assert_allclose(result.x, 0.0)
        assert result.iterations == 0

    def test_iteration_cap_warns(self):
        with pytest.warns(RuntimeWarning, match="iteration cap"):
            result = nnls(np.eye(3), np.ones(3), max_iter=1)
        assert not result.converged
        assert np.all(result.x >= 0.0)

    def test_stall_on_blocked_coordinates_is_not_convergence(self, monkeypatch):
        # every entering coordinate solves to a negative value and gets blocked
        monkeypatch.setattr(
            nnls_module, "_passive_lstsq", lambda A, b, passive: -np.ones(A.shape[1])
        )
        with pytest.warns(RuntimeWarning, match="blocked"):
            result = nnls(np.eye(2), np.ones(2))
        assert not result.converged
        assert_allclose(result.x, 0.0)

    def test_shape_errors(self):
        with pytest.raises(ShapeError):
            nnls(np.ones((3, 2)), np.ones(4))
        with pytest.raises(ShapeError):
            nnls_columns(np.ones((3, 2)), np.ones((4, 5)))


class TestBatches:
    def test_columns(self):
        gen = np.random.default_rng(4)
        A = np.abs(gen.normal(size=(6, 3)))
        S = np.abs(gen.normal(size=(3, 5)))
        batch = nnls_columns(A, A @ S)
        assert batch.converged
        assert_allclose(batch.x, S, atol=1e-8)

    def test_rows(self):
        gen = np.random.default_rng(5)
        M = np.abs(gen.normal(size=(4, 3)))
        S = np.abs(gen.normal(size=(3, 9)))
        batch = nnls_rows(M @ S, S)
        assert batch.x.shape == (4, 3)
        assert_allclose(batch.x, M, atol=1e-8)
