import itertools

import numpy as np
import pytest

from megacl.nqp import NqpConvergenceError, kkt_residual, objective, solve_nqp


def brute_force_nqp(Q, c):
    """Minimum of v'Qv + c'v over v >= 0 by enumerating candidate free sets."""
    n = len(c)
    best, best_v = 0.0, np.zeros(n)
    for r in range(1, n + 1):
        for free in itertools.combinations(range(n), r):
            idx = list(free)
            sol, *_ = np.linalg.lstsq(2 * Q[np.ix_(idx, idx)], -c[idx], rcond=None)
            if np.any(sol < -1e-12):
                continue
            v = np.zeros(n)
            v[idx] = np.maximum(sol, 0)
            f = objective(Q, c, v)
            if f < best:
                best, best_v = f, v
    return best, best_v


def random_psd(rng, n, rank=None):
    A = rng.normal(size=(rank or n, n))
    return A.T @ A


def bounded_instance(rng, n, rank):
    """Q = A'A with c in the range of A', so the minimum is finite (the GEM case)."""
    A = rng.normal(size=(rank, n))
    return A.T @ A, A.T @ rng.normal(size=rank)


def test_nonnegative_c_gives_zero():
    rng = np.random.default_rng(0)
    Q = random_psd(rng, 4)
    res = solve_nqp(Q, np.abs(rng.normal(size=4)))
    assert np.array_equal(res.x, np.zeros(4))
    assert res.iterations == 0


def test_one_dimensional():
    res = solve_nqp(np.array([[1.0]]), np.array([-2.0]))
    assert res.x == pytest.approx([1.0], abs=1e-12)
    assert res.objective == pytest.approx(-1.0, abs=1e-12)


def test_empty_problem():
    res = solve_nqp(np.zeros((0, 0)), np.zeros(0))
    assert res.x.shape == (0,)


def test_three_dim_grid_and_random_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        Q = random_psd(rng, 3)
        c = rng.normal(size=3) * 3
        res = solve_nqp(Q, c)
        v_max = max(3.0, 2.0 * res.x.max())
        axis = np.linspace(0.0, v_max, 80)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), -1).reshape(-1, 3)
        pts = np.vstack([grid, rng.uniform(0, v_max, size=(1_000_000 - len(grid), 3))])
        vals = np.einsum("ij,jk,ik->i", pts, Q, pts) + pts @ c
        assert res.objective <= vals.min() + 1e-6


@pytest.mark.parametrize("n", [2, 4, 6, 8])
def test_matches_active_set_enumeration(n):
    rng = np.random.default_rng(n)
    for _ in range(25):
        Q, c = bounded_instance(rng, n, int(rng.integers(1, n + 2)))
        res = solve_nqp(Q, c)
        best, _ = brute_force_nqp(Q, c)
        assert res.objective == pytest.approx(best, abs=1e-8 * (1 + abs(best)))


def test_certificate_feasibility_and_monotone_history():
    rng = np.random.default_rng(2)
    for trial in range(200):
        n = int(rng.integers(1, 30))
        Q, c = bounded_instance(rng, n, int(rng.integers(1, n + 1)))
        res = solve_nqp(Q, c)
        tol = 1e-9 * (1 + np.linalg.norm(c))
        assert np.all(res.x >= -1e-12)
        assert kkt_residual(Q, c, res.x, tol) <= tol
        assert res.residual <= tol
        h = np.asarray(res.history)
        assert np.all(np.diff(h) <= 1e-14 * (1 + np.abs(h[:-1])))


def test_gem_shaped_instances():
    # Q = R'R with many more dimensions than constraints, as in GEM
    rng = np.random.default_rng(3)
    for _ in range(50):
        R = rng.normal(size=(200, int(rng.integers(2, 20))))
        g = rng.normal(size=200) - R.mean(1) * 3
        Q, c = R.T @ R, 2 * R.T @ g
        res = solve_nqp(Q, c)
        assert np.all(R.T @ (g + R @ res.x) >= -1e-7 * np.linalg.norm(g))


@pytest.mark.parametrize("d,m", [(10, 150), (5, 40), (50, 12)])
def test_degenerate_faces(d, m):
    # more constraints than dimensions, plus a duplicated reference
    rng = np.random.default_rng(d * m)
    for _ in range(20):
        R = rng.normal(size=(d, m))
        R[:, 1] = R[:, 0]
        g = rng.normal(size=d) - 2 * R.mean(1)
        Q, c = R.T @ R, 2 * R.T @ g
        res = solve_nqp(Q, c)
        assert res.residual <= 1e-9 * (1 + np.linalg.norm(c))
        assert np.all(R.T @ (g + R @ res.x) >= -1e-9 * np.linalg.norm(g))
        h = np.asarray(res.history)
        assert np.all(np.diff(h) <= 1e-14 * (1 + np.abs(h[:-1])))


def test_iteration_cap_raises_with_residual():
    rng = np.random.default_rng(4)
    Q = random_psd(rng, 12) + np.diag(np.logspace(-6, 3, 12))
    c = -np.abs(rng.normal(size=12))
    with pytest.raises(NqpConvergenceError) as err:
        solve_nqp(Q, c, max_iters=1, tol=1e-30)
    assert err.value.residual > 0 and err.value.iterations == 1


def test_rejects_bad_problems():
    with pytest.raises(ValueError):
        solve_nqp(np.array([[1.0, 2.0], [0.0, 1.0]]), np.zeros(2))
    with pytest.raises(ValueError):
        solve_nqp(np.array([[-1.0]]), np.zeros(1))
    with pytest.raises(ValueError):
        solve_nqp(np.eye(2), np.zeros(3))
