import numpy as np
import pytest
import scipy.sparse as sp

from phaseflow.errors import IterativeFailure, SolverError
from phaseflow.linalg import SaddleSystem, bicgstab, direct_solve, solve_linear, solve_saddle


def laplacian_1d(n):
    main = 2.0 * np.ones(n)
    off = -np.ones(n - 1)
    return sp.csr_array(sp.diags_array([off, main, off], offsets=[-1, 0, 1]))


def test_direct_identity():
    A = sp.eye_array(5, format="csr")
    b = np.arange(5.0)
    np.testing.assert_allclose(direct_solve(A, b), b)


def test_direct_diagonal():
    A = sp.csr_array(np.array([[2.0, 0.0], [0.0, 4.0]]))
    np.testing.assert_allclose(direct_solve(A, np.array([2.0, 4.0])), [1.0, 1.0])


def test_direct_random_spd_residual():
    rng = np.random.default_rng(3)
    M = rng.standard_normal((50, 50))
    A = sp.csr_array(M @ M.T + 50 * np.eye(50))
    b = rng.standard_normal(50)
    x = direct_solve(A, b)
    resid = np.abs(A @ x - b).max()
    bound = 1e-10 * (abs(A).sum(axis=1).max() * np.abs(x).max() + np.abs(b).max())
    assert resid <= bound


def test_direct_singular_raises():
    A = sp.csr_array(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(SolverError):
        direct_solve(A, np.array([1.0, 1.0]))


def test_bicgstab_zero_rhs_zero_iterations():
    A = laplacian_1d(10)
    x, it = bicgstab(A, np.zeros(10), tol=1e-12)
    assert it == 0
    np.testing.assert_allclose(x, 0.0)


def test_bicgstab_identity_one_iteration():
    A = sp.eye_array(7, format="csr")
    b = np.linspace(1, 2, 7)
    x, it = bicgstab(A, b, tol=1e-12)
    assert it == 1
    np.testing.assert_allclose(x, b, atol=1e-12)


def test_bicgstab_matches_direct_on_laplacian():
    A = laplacian_1d(100)
    b = np.ones(100)
    x, _ = bicgstab(A, b, tol=1e-12, maxit=500)
    xd = direct_solve(A, b)
    assert np.abs(A @ x - b).max() <= 1e-12 * np.linalg.norm(b) * 10
    np.testing.assert_allclose(x, xd, atol=1e-7)


def test_bicgstab_maxit_raises():
    A = laplacian_1d(200)
    with pytest.raises(IterativeFailure):
        bicgstab(A, np.ones(200), tol=1e-14, maxit=2)


def test_bicgstab_rejects_bad_tol():
    with pytest.raises(ValueError):
        bicgstab(laplacian_1d(4), np.ones(4), tol=0.0)


def test_solve_linear_falls_back():
    # tiny maxit forces the fallback path; result still accurate
    A = laplacian_1d(50)
    b = np.ones(50)
    x = solve_linear(A, b, tol=1e-14, maxit=1)
    assert np.abs(A @ x - b).max() < 1e-10


def synthetic_saddle(n_v=24, n_p=7, seed=11, with_c=False):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((n_v, n_v))
    G = sp.csr_array(M @ M.T + n_v * np.eye(n_v))
    R = rng.standard_normal((n_p, n_v))
    R -= R.mean(axis=0, keepdims=True)  # column sums zero: constants in the left kernel
    B = sp.csr_array(R)
    C = None
    if with_c:
        S = rng.standard_normal((n_p, n_p - 1))
        S -= S.mean(axis=0, keepdims=True)
        C = sp.csr_array(S @ S.T)
    w = np.abs(rng.standard_normal(n_p)) + 0.5
    f = rng.standard_normal(n_v)
    return SaddleSystem(G=G, B=B, C=C, mean_weights=w, rhs_v=f)


def test_saddle_zero_rhs():
    sys = synthetic_saddle()
    sys.rhs_v = np.zeros_like(sys.rhs_v)
    v, p = solve_saddle(sys, tol=1e-10)
    np.testing.assert_allclose(v, 0.0, atol=1e-12)
    np.testing.assert_allclose(p, 0.0, atol=1e-12)


@pytest.mark.parametrize("with_c", [False, True])
def test_saddle_direct_constraints(with_c):
    sys = synthetic_saddle(with_c=with_c)
    v, p = solve_saddle(sys, tol=1e-9)
    div = sys.B @ v - (sys.C @ p if sys.C is not None else 0.0)
    assert np.abs(div).max() <= 1e-9
    assert abs(sys.mean_weights @ p) <= 1e-12 * np.abs(p).max()
    mom = sys.G @ v + sys.B.T @ p - sys.rhs_v
    assert np.abs(mom).max() <= 1e-9 * (1.0 + np.abs(sys.rhs_v).max())


def test_saddle_direct_vs_schur():
    sys = synthetic_saddle()
    v1, p1 = solve_saddle(sys, tol=1e-10, method="direct")
    v2, p2 = solve_saddle(sys, tol=1e-10, method="schur")
    assert np.abs(v1 - v2).max() < 1e-8
    assert np.abs(p1 - p2).max() < 1e-8
