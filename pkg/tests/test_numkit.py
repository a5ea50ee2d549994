import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisonbench.errors import DimMismatch, NonFiniteIterate
from poisonbench.numkit import CgConfig, cg_solve, fd_grad, fd_hvp


def random_spd(rng, dim, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigs = np.linspace(1.0, cond, dim)
    return Q @ np.diag(eigs) @ Q.T


TIGHT = CgConfig(max_iters=200, residual_tol=1e-12, damping=0.0)


def test_cg_identity():
    res = cg_solve(lambda v: v, np.array([3.0, -1.0]), TIGHT)
    assert res.converged
    np.testing.assert_allclose(res.x, [3.0, -1.0], atol=1e-10)


def test_cg_diagonal():
    res = cg_solve(lambda v: np.array([2.0, 4.0]) * v, np.array([2.0, 4.0]), TIGHT)
    np.testing.assert_allclose(res.x, [1.0, 1.0], atol=1e-10)


def test_cg_matches_dense_solve():
    rng = np.random.default_rng(0)
    A = random_spd(rng, 8)
    b = rng.normal(size=8)
    res = cg_solve(lambda v: A @ v, b, CgConfig(max_iters=100, residual_tol=1e-10, damping=0.0))
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-6)


@pytest.mark.parametrize("dim", [2, 5, 16])
def test_cg_converges_within_dim_iters(dim):
    rng = np.random.default_rng(dim)
    A = random_spd(rng, dim, cond=5.0)
    b = rng.normal(size=dim)
    res = cg_solve(lambda v: A @ v, b, CgConfig(max_iters=dim, residual_tol=1e-10, damping=0.0))
    assert res.converged and res.iters <= dim


def test_cg_zero_rhs():
    res = cg_solve(lambda v: v, np.zeros(3) + 0.0, TIGHT)
    np.testing.assert_array_equal(res.x, np.zeros(3))
    assert res.converged


def test_cg_damping_applied():
    # operator is zero; damping alone makes the system solvable
    cfg = CgConfig(max_iters=50, residual_tol=1e-10, damping=0.5)
    res = cg_solve(lambda v: np.zeros_like(v), np.array([1.0, 2.0]), cfg)
    np.testing.assert_allclose(res.x, [2.0, 4.0], atol=1e-8)


def test_cg_flags_cap():
    rng = np.random.default_rng(3)
    A = random_spd(rng, 30, cond=1e4)
    b = rng.normal(size=30)
    res = cg_solve(lambda v: A @ v, b, CgConfig(max_iters=2, residual_tol=1e-14, damping=0.0))
    assert not res.converged
    assert np.all(np.isfinite(res.x))


def test_cg_nonfinite_raises():
    with pytest.raises(NonFiniteIterate):
        cg_solve(lambda v: v * np.nan, np.array([1.0, 1.0]), TIGHT)


def test_fd_grad_quadratic():
    g = fd_grad(lambda x: 0.5 * float(x @ x), np.array([1.0, 2.0]), h=1e-5)
    np.testing.assert_allclose(g, [1.0, 2.0], atol=1e-8)


def test_fd_grad_constant():
    g = fd_grad(lambda x: 4.2, np.array([0.3, -0.7, 1.1]))
    np.testing.assert_array_equal(g, np.zeros(3))


def test_fd_hvp_diag_quadratic():
    D = np.array([1.0, 3.0])
    out = fd_hvp(lambda x: D * x, np.array([0.2, -0.4]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [1.0, 3.0], atol=1e-8)


def test_fd_hvp_zero_direction():
    out = fd_hvp(lambda x: x, np.array([1.0, 2.0]), np.zeros(2))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_fd_hvp_dim_mismatch():
    with pytest.raises(DimMismatch):
        fd_hvp(lambda x: x, np.array([1.0, 2.0]), np.array([1.0]))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=24), st.integers(min_value=0, max_value=10_000))
def test_cg_spd_property(dim, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, dim, cond=50.0)
    b = rng.normal(size=dim)
    res = cg_solve(lambda v: A @ v, b, CgConfig(max_iters=4 * dim, residual_tol=1e-11, damping=0.0))
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-6, rtol=1e-6)
