import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotd import environments as envs
from rotd.environments import Sample
from rotd.features import TableFeatures
from rotd.oracle import (
    ConvergenceError,
    DiagnosticsRecord,
    RankDeficientError,
    SingularSystemError,
    count_active,
    diagnostics_from_iterates,
    duality_diagnostics,
    exact_system,
    mspbe,
    optimality_violation,
    reference_solve,
    regularized_objective,
    sample_system,
    solve_fixed_point,
)
from rotd.solvers import PrimalDualState, SolverConfig, rotd_step

cvxpy = pytest.importorskip("cvxpy")


def expected_system(model, feats, eta, gamma):
    """Independent oracle: sum the per-transition dense system over (s, s') pairs."""
    d = feats.d
    A, b = np.zeros((2 * d, 2 * d)), np.zeros(2 * d)
    Rm = model.reward_matrix
    for s in range(model.n_states):
        for s2 in range(model.n_states):
            p = model.state_dist[s] * model.transition[s, s2]
            if p == 0:
                continue
            r = Rm[s, s2] if Rm is not None else model.reward[s]
            phi_next = np.zeros(d) if s2 in model.absorbing else feats(s2)
            A_t, b_t = sample_system(Sample(feats(s), r, phi_next), eta, gamma)
            A += p * A_t
            b += p * b_t
    return A, b


def projected_residual_mspbe(theta, model, feats, gamma):
    """Independent oracle: ||Pi (T V - V)||^2_Xi with a pseudo-inverse projection."""
    Phi = feats.batch(range(model.n_states))
    Phi[list(model.absorbing)] = 0.0
    Xi = np.diag(model.state_dist)
    V = Phi @ theta
    TV = model.reward + gamma * model.transition @ V
    Pi = Phi @ np.linalg.pinv(Phi.T @ Xi @ Phi) @ Phi.T @ Xi
    r = Pi @ (TV - V)
    return float(r @ Xi @ r)


def benchmark_problems():
    yield "star", *envs.star_mdp(), True
    model = envs.random_walk()
    for kind in ("tabular", "inverted", "dependent"):
        yield f"rw-{kind}", model, envs.random_walk_features(kind), False
    yield "random", *envs.random_mdp(0), False


@pytest.mark.parametrize("name,model,feats,deficient", list(benchmark_problems()), ids=lambda v: v if isinstance(v, str) else "")
def test_exact_system_matches_transition_sum(name, model, feats, deficient):
    system = exact_system(model, feats, eta=3.0, allow_rank_deficient=deficient)
    A, b = expected_system(model, feats, 3.0, model.gamma)
    np.testing.assert_allclose(system.A, A, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(system.b, b, rtol=1e-12, atol=1e-14)
    assert np.allclose(system.C, system.C.T) and np.linalg.eigvalsh(system.C).min() > -1e-10


@pytest.mark.parametrize("name,model,feats,deficient", list(benchmark_problems()), ids=lambda v: v if isinstance(v, str) else "")
def test_exact_system_matches_monte_carlo(name, model, feats, deficient):
    # 10^6 i.i.d. samples, averaged through empirical (s, s') pair counts
    n = 1_000_000
    batch = envs.collect_iid_samples(model, feats, n, seed=2024)
    s = batch.states[:, 0].astype(int)
    s2 = batch.next_states[:, 0].astype(int)
    counts = np.zeros((model.n_states, model.n_states))
    np.add.at(counts, (s, s2), 1.0)
    A_mc, b_mc = np.zeros((2 * feats.d,) * 2), np.zeros(2 * feats.d)
    for i, j in zip(*np.nonzero(counts)):
        k = np.flatnonzero((s == i) & (s2 == j))[0]
        A_t, b_t = sample_system(batch[k], 1.0, model.gamma)
        A_mc += counts[i, j] / n * A_t
        b_mc += counts[i, j] / n * b_t
    system = exact_system(model, feats, eta=1.0, allow_rank_deficient=deficient)
    assert np.abs(A_mc - system.A).max() < 1e-2
    assert np.abs(b_mc - system.b).max() < 1e-2


def test_exact_system_eta_zero_blocks():
    model = envs.random_walk()
    system = exact_system(model, envs.random_walk_features("tabular"), eta=0.0)
    np.testing.assert_array_equal(system.A[:5], 0.0)
    np.testing.assert_array_equal(system.b[:5], 0.0)


def test_rank_deficiency_is_an_error():
    model, feats = envs.star_mdp()
    with pytest.raises(RankDeficientError):
        exact_system(model, feats, eta=1.0)
    model = envs.random_walk()
    base = envs.random_walk_features("tabular")
    dup = TableFeatures(np.hstack([base.table, base.table[:, :1]]), "dup", base.terminal)
    with pytest.raises(RankDeficientError):
        exact_system(model, dup, eta=1.0)
    # with rank deficiency allowed, the projection only depends on the span: MSPBE unchanged
    theta = np.random.default_rng(0).standard_normal(5)
    full = exact_system(model, base, eta=1.0)
    wide = exact_system(model, dup, eta=1.0, allow_rank_deficient=True)
    assert not wide.full_rank
    assert mspbe(np.append(theta, 0.0), wide) == pytest.approx(mspbe(theta, full), rel=1e-10)


@pytest.mark.parametrize("name,model,feats,deficient", list(benchmark_problems()), ids=lambda v: v if isinstance(v, str) else "")
def test_mspbe_matches_projection_oracle(name, model, feats, deficient):
    system = exact_system(model, feats, eta=1.0, allow_rank_deficient=deficient)
    rng = np.random.default_rng(1)
    for _ in range(5):
        theta = rng.standard_normal(feats.d)
        assert mspbe(theta, system) == pytest.approx(projected_residual_mspbe(theta, model, feats, model.gamma),
                                                     rel=1e-9, abs=1e-14)


def test_mspbe_examples():
    model, feats = envs.star_mdp()
    star = exact_system(model, feats, eta=10.0, allow_rank_deficient=True)
    assert mspbe(np.zeros(8), star) == 0.0
    baird = mspbe(envs.BAIRD_THETA0, star)
    # term-by-term hand assembly: V = (3,...,3, 12); T V = 0.99 * 12 everywhere
    V = np.array([3.0] * 6 + [12.0])
    residual = 0.99 * 12.0 - V
    Phi = feats.matrix()
    Pi = Phi @ np.linalg.pinv(Phi.T @ Phi / 7) @ Phi.T / 7
    proj = Pi @ residual
    assert baird > 0 and baird == pytest.approx(proj @ proj / 7, rel=1e-10)

    rw = envs.random_walk()
    tab = exact_system(rw, envs.random_walk_features("tabular"), eta=1.0)
    interior = list(range(1, 6))
    v = np.linalg.solve(np.eye(5) - rw.gamma * rw.transition[np.ix_(interior, interior)], rw.reward[interior])
    assert mspbe(v, tab) < 1e-10


def test_solve_fixed_point():
    rw = envs.random_walk()
    system = exact_system(rw, envs.random_walk_features("tabular"), eta=1.0)
    x = solve_fixed_point(system)
    interior = list(range(1, 6))
    v = np.linalg.solve(np.eye(5) - rw.gamma * rw.transition[np.ix_(interior, interior)], rw.reward[interior])
    np.testing.assert_allclose(x[5:], v, rtol=1e-10)
    assert np.linalg.norm(system.A @ x - system.b) <= 1e-8

    model, feats = envs.star_mdp()
    star = exact_system(model, feats, eta=10.0, allow_rank_deficient=True)
    with pytest.raises(SingularSystemError) as info:
        solve_fixed_point(star)
    assert info.value.cond > 1e12
    x = solve_fixed_point(star, least_squares=True)
    assert mspbe(x[8:], star) <= 1e-10
    assert np.linalg.norm(star.A @ x - star.b) <= 1e-8


def test_diagnostics_fields():
    rw = envs.random_walk()
    system = exact_system(rw, envs.random_walk_features("tabular"), eta=1.0)
    cfg = SolverConfig(alpha=0.1, gamma=0.9, rho1=0.0)
    x = solve_fixed_point(system)
    rec = diagnostics_from_iterates(5, x, np.full(10, 0.3), x, system, cfg, delta=0.25)
    assert rec.l2_residual <= 1e-8 and rec.dual_value <= 1e-8 and rec.mspbe < 1e-10
    assert rec.as_row()[0] == 5 and rec.delta == 0.25
    assert DiagnosticsRecord.COLUMNS == ("iteration", "mspbe", "l2_residual", "dual_value", "delta",
                                         "theta_nnz", "w_nnz", "objective")
    theta = np.array([0, 1.0, 0, -2.0, 0, 0, 3e-9, 0.5])
    assert count_active(theta) == 3
    nan_rec = diagnostics_from_iterates(0, np.zeros(4), np.zeros(4), np.array([0, 1.0, 0, 2.0]), None, cfg)
    assert math.isnan(nan_rec.mspbe) and math.isnan(nan_rec.objective) and nan_rec.theta_nnz == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_duality_inequality_along_rotd(seed):
    model, feats = envs.random_mdp(seed % 50)
    system = exact_system(model, feats, eta=1.0)
    cfg = SolverConfig(alpha=0.3, gamma=0.9, rho1=0.05, rho2=0.05)
    batch = envs.collect_iid_samples(model, feats, 40, seed=seed)
    state = PrimalDualState.zeros(feats.d)
    for t in range(len(batch)):
        state = rotd_step(state, batch[t], cfg)
        rec = duality_diagnostics(state, system, cfg)
        assert np.linalg.norm(state.y) <= 1 + 1e-12
        assert rec.dual_value <= rec.l2_residual + 1e-12
        assert rec.mspbe >= 0


# --------------------------------------------------------------------------
# reference solver

def cvxpy_solve(A, b, rho1, rho2, m):
    d = A.shape[1] // 2
    x = cvxpy.Variable(A.shape[1])
    obj = cvxpy.norm(A @ x - b, "inf" if m == math.inf else m) + rho1 * cvxpy.norm1(x[d:]) + rho2 * cvxpy.norm1(x[:d])
    prob = cvxpy.Problem(cvxpy.Minimize(obj))
    prob.solve()
    return prob.value


@pytest.mark.parametrize("m", [2.0, 1.0, math.inf])
def test_reference_solve_matches_conic_solver(m):
    rng = np.random.default_rng(int(m) if m != math.inf else 99)
    for _ in range(3):
        A, b = rng.standard_normal((8, 8)), rng.standard_normal(8)
        x = reference_solve(A, b, 0.3, 0.1, m)
        assert regularized_objective(A, b, x, 0.3, 0.1, m) == pytest.approx(cvxpy_solve(A, b, 0.3, 0.1, m), abs=1e-6)


def test_reference_solve_examples():
    A, b = np.eye(2), np.array([1.0, 0.0])
    x = reference_solve(A, b, 0.5, 0.5, 2)
    np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-8)
    ray = [regularized_objective(A, b, np.array([t, 0.0]), 0.5, 0.5) for t in np.linspace(0, 2, 2001)]
    assert np.argmin(ray) == 1000 and min(ray) == pytest.approx(0.5)

    rng = np.random.default_rng(5)
    A, b = rng.standard_normal((6, 6)), rng.standard_normal(6)
    # zero optimal residual makes the objective nonsmooth at x*: convergence is sublinear, so ask for 1e-8
    np.testing.assert_allclose(reference_solve(A, b, 0.0, 0.0, 2, tol=1e-8), np.linalg.solve(A, b), atol=1e-6)


def test_reference_solve_large_rho_gives_zero():
    rng = np.random.default_rng(8)
    A, b = rng.standard_normal((6, 6)), rng.standard_normal(6)
    # 0 is optimal once rho dominates the residual gradient at 0, -A^T b / ||b||
    rho = np.abs(A.T @ b / np.linalg.norm(b)).max() * 1.01
    x = reference_solve(A, b, rho, rho, 2)
    np.testing.assert_array_equal(x, 0.0)
    f0 = regularized_objective(A, b, np.zeros(6), rho, rho)
    for i in range(6):
        for h in (1e-3, -1e-3):
            assert regularized_objective(A, b, h * np.eye(6)[i], rho, rho) > f0
    # just below the threshold the zero solution is no longer optimal
    x = reference_solve(A, b, 0.9 * rho, 0.9 * rho, 2)
    assert np.abs(x).max() > 0


def test_reference_solve_first_order_optimality():
    rng = np.random.default_rng(4)
    for _ in range(5):
        A, b = rng.standard_normal((10, 10)), rng.standard_normal(10)
        x = reference_solve(A, b, 0.2, 0.4, 2)
        assert optimality_violation(A, b, x, 0.2, 0.4) < 1e-6


def test_reference_solve_cap_reports_best():
    rng = np.random.default_rng(2)
    A, b = rng.standard_normal((6, 6)), rng.standard_normal(6)
    with pytest.raises(ConvergenceError) as info:
        reference_solve(A, b, 0.1, 0.1, 2, max_iter=5)
    assert info.value.best_objective == pytest.approx(regularized_objective(A, b, info.value.best_x, 0.1, 0.1))
    with pytest.raises(ValueError):
        reference_solve(np.eye(3), np.ones(3), 0.1, 0.1)
    with pytest.raises(ValueError):
        reference_solve(A, b, 0.1, 0.1, m=3)
