import itertools

import numpy as np
import pytest

from safesynth.lp import LpStatus, solve_dense_lp


def vertex_enumeration_optimum(cost, G, h, feas_tol=1e-9):
    """Brute-force optimum over all row-basis vertices; None if none feasible.

    Batched over all nv-row combinations so the oracle stays fast enough to
    sweep hundreds of instances.
    """
    m, nv = G.shape
    combos = np.array(list(itertools.combinations(range(m), nv)))
    A = G[combos]                      # (ncomb, nv, nv)
    b = h[combos]                      # (ncomb, nv)
    dets = np.linalg.det(A)
    ok = np.abs(dets) > 1e-10
    z = np.linalg.solve(A[ok], b[ok][..., None])[..., 0]   # (nok, nv)
    feasible = np.max(z @ G.T - h[None, :], axis=1) <= feas_tol
    if not np.any(feasible):
        return None
    return float(np.min(z[feasible] @ cost))


def random_bounded_lp(rng, nv=3, extra_rows=24, box=10.0):
    """Random rows through feasible origin plus box rows: feasible and bounded."""
    G_rand = rng.normal(size=(extra_rows, nv))
    h_rand = rng.uniform(0.1, 2.0, size=extra_rows)
    G_box = np.vstack([np.eye(nv), -np.eye(nv)])
    h_box = np.full(2 * nv, box)
    G = np.vstack([G_rand, G_box])
    h = np.concatenate([h_rand, h_box])
    cost = rng.normal(size=nv)
    return cost, G, h


def test_max_of_list():
    # min K s.t. K >= a_i is max(a)
    a = np.array([-3.0, -1.0, -2.0])
    G = -np.ones((3, 1))
    h = -a
    res = solve_dense_lp(np.array([1.0]), G, h)
    assert res.status is LpStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.0, abs=1e-12)
    assert list(res.basis_rows) == [1]


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(60):
        cost, G, h = random_bounded_lp(rng)
        res = solve_dense_lp(cost, G, h)
        assert res.status is LpStatus.OPTIMAL
        oracle = vertex_enumeration_optimum(cost, G, h)
        assert oracle is not None
        assert res.objective == pytest.approx(oracle, abs=1e-8)
        checked += 1
    assert checked == 60


def test_random_lps_match_scipy():
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(7)
    for _ in range(25):
        cost, G, h = random_bounded_lp(rng, nv=5, extra_rows=40)
        res = solve_dense_lp(cost, G, h)
        ref = scipy_opt.linprog(cost, A_ub=G, b_ub=h, bounds=(None, None), method="highs")
        assert res.status is LpStatus.OPTIMAL and ref.status == 0
        assert res.objective == pytest.approx(ref.fun, abs=1e-7)


def test_infeasible_detected():
    # z <= -1 and -z <= 0 cannot hold together
    G = np.array([[1.0], [-1.0]])
    h = np.array([-1.0, 0.0])
    res = solve_dense_lp(np.array([1.0]), G, h)
    assert res.status is LpStatus.INFEASIBLE


def test_unbounded_detected():
    # min z with only z <= 1
    G = np.array([[1.0]])
    h = np.array([1.0])
    res = solve_dense_lp(np.array([1.0]), G, h)
    assert res.status is LpStatus.UNBOUNDED


def test_feasibility_of_reported_point():
    rng = np.random.default_rng(5)
    for _ in range(10):
        cost, G, h = random_bounded_lp(rng, nv=4, extra_rows=200)
        res = solve_dense_lp(cost, G, h)
        assert res.status is LpStatus.OPTIMAL
        assert np.max(G @ res.z - h) <= 1e-8
        assert res.max_violation <= 1e-8


def test_deterministic_given_identical_input():
    rng = np.random.default_rng(31)
    cost, G, h = random_bounded_lp(rng, nv=4, extra_rows=100)
    res1 = solve_dense_lp(cost, G, h)
    res2 = solve_dense_lp(cost, G, h)
    assert np.array_equal(res1.z, res2.z)
    assert res1.iterations == res2.iterations
    assert np.array_equal(res1.basis_rows, res2.basis_rows)


def test_degenerate_vertex_handled():
    # many redundant copies of the binding row force degenerate pivots
    G = np.vstack([-np.ones((40, 1)), np.array([[1.0]])])
    h = np.concatenate([np.full(40, 1.0), [5.0]])
    res = solve_dense_lp(np.array([1.0]), G, h)
    assert res.status is LpStatus.OPTIMAL
    assert res.objective == pytest.approx(-1.0, abs=1e-10)


def test_active_set_multipliers_nonnegative():
    rng = np.random.default_rng(13)
    cost, G, h = random_bounded_lp(rng, nv=3, extra_rows=50)
    res = solve_dense_lp(cost, G, h)
    assert np.all(res.multipliers >= 0.0)
    # stationarity: -cost is a nonnegative combination of active row normals
    recon = res.multipliers @ G[res.basis_rows]
    assert np.allclose(recon, -cost, atol=1e-7)


def test_tall_problem_smoke():
    rng = np.random.default_rng(17)
    cost, G, h = random_bounded_lp(rng, nv=6, extra_rows=50_000, box=100.0)
    res = solve_dense_lp(cost, G, h)
    assert res.status is LpStatus.OPTIMAL
    assert np.max(G @ res.z - h) <= 1e-8


def test_equality_pair_rows_handled():
    # exact-value pins via opposing row pairs (empty-interior feasible sets)
    # are what lexicographic refinement builds; they must stay solvable
    scipy_opt = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(7)
    for trial in range(20):
        nv = int(rng.integers(2, 6))
        G = rng.normal(size=(20, nv))
        h = rng.uniform(0.1, 2.0, size=20)
        v = float(rng.normal(scale=0.01))
        pin = np.zeros((2, nv))
        pin[0, 0] = 1.0
        pin[1, 0] = -1.0
        Gb = np.vstack([G, pin, np.eye(nv), -np.eye(nv)])
        hb = np.concatenate([h, [v, -v], np.full(2 * nv, 10.0)])
        cost = rng.normal(size=nv)
        res = solve_dense_lp(cost, Gb, hb)
        ref = scipy_opt.linprog(cost, A_ub=Gb, b_ub=hb, bounds=(None, None), method="highs")
        if ref.status != 0:
            assert res.status is not LpStatus.OPTIMAL
            continue
        assert res.status is LpStatus.OPTIMAL
        assert res.objective == pytest.approx(ref.fun, abs=1e-7)
        assert res.z[0] == pytest.approx(v, abs=1e-9)


def test_optimum_with_unconstrained_coordinates():
    # objective bounded although the feasible set is unbounded elsewhere
    res = solve_dense_lp(
        np.array([1.0, 0.0, 0.0]), np.array([[-1.0, 0.0, 0.0]]), np.array([-3.0])
    )
    assert res.status is LpStatus.OPTIMAL
    assert res.objective == pytest.approx(3.0, abs=1e-12)


def test_column_scaling_insensitivity():
    # wildly scaled columns (like monomial bases) must not break the solve
    rng = np.random.default_rng(19)
    cost, G, h = random_bounded_lp(rng, nv=4, extra_rows=60)
    scales = np.array([1e-6, 1.0, 1e4, 1e7])
    G2 = G / scales[None, :]
    cost2 = cost / scales
    res1 = solve_dense_lp(cost, G, h)
    res2 = solve_dense_lp(cost2, G2, h)
    assert res2.status is LpStatus.OPTIMAL
    assert res2.objective == pytest.approx(res1.objective, rel=1e-8, abs=1e-10)
    assert np.allclose(res2.z * (1 / scales), res1.z, rtol=1e-6, atol=1e-8)
