import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otbss.errors import DegenerateWeights, InvalidRank, NoTrainingFrames
from otbss.nmf import (FitOptions, RegularizerSpec, barycenter_init, fit, fit_euclidean,
                       primal_objective, regularizer_conjugates, update_coefficients,
                       update_dictionary)
from otbss.optim import SolverParams, accelerated_gradient, minimize_smooth
from otbss.ot_core import GibbsKernel

from oracles import central_gradient, entropic_value, plain_sinkhorn, plain_sinkhorn_values

TIGHT = SolverParams(tol=1e-10, max_iter=20000)


def line_cost(n):
    i = np.arange(n, dtype=float)
    return np.sqrt(np.abs(i[:, None] - i[None, :]) / n)


def xlogx(v):
    v = np.asarray(v, float)
    return float(np.sum(np.where(v > 0, v * np.log(np.where(v > 0, v, 1.0)), 0.0)))


def ot_gamma(x, y, C, gamma):
    return entropic_value(plain_sinkhorn(x, y, C, gamma, n_iter=5000), C, gamma)


# regularizer conjugates

def test_simplex_conjugate_symmetric_point():
    value, grad = regularizer_conjugates(0.3, np.zeros(5))
    assert value == pytest.approx(0.3 * np.log(5))
    np.testing.assert_allclose(grad, 0.2)


def test_orthant_conjugate_closed_form():
    value, grad = regularizer_conjugates(0.3, np.full(4, 0.3), mode="orthant")
    assert value == pytest.approx(1.2)
    np.testing.assert_allclose(grad, 1.0)


@pytest.mark.parametrize("mode", ["simplex", "orthant"])
def test_regularizer_gradients_match_differences(mode):
    rng = np.random.default_rng(0)
    x = rng.normal(size=6) * 0.5
    _, grad = regularizer_conjugates(0.4, x, mode)
    fd = central_gradient(lambda z: regularizer_conjugates(0.4, z, mode)[0], x, h=1e-6)
    np.testing.assert_allclose(grad, fd, rtol=1e-6)


# optimizers

def test_agd_quadratic():
    c = np.array([1.0, -2.0, 3.0])
    res = accelerated_gradient(lambda x: (0.5 * np.sum((x - c) ** 2), x - c), np.zeros(3),
                               SolverParams(method="agd", tol=1e-10, max_iter=200))
    assert res.converged.all()
    assert res.n_iter < 200
    np.testing.assert_allclose(res.x, c, atol=1e-8)


def test_agd_trace_never_increases():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(8, 8))
    Q = A @ A.T + 0.01 * np.eye(8)
    b = rng.normal(size=8)
    res = accelerated_gradient(lambda x: (0.5 * x @ Q @ x - b @ x, Q @ x - b), np.zeros(8),
                               SolverParams(method="agd", tol=1e-9, max_iter=5000))
    assert np.all(np.diff(res.trace) <= 1e-12 * np.abs(res.trace[:-1]).max())


def test_solvers_agree_with_slow_gradient_descent():
    # coefficient dual on a 4x3 instance
    rng = np.random.default_rng(2)
    D = rng.random((4, 3))
    D /= D.sum(0)
    x = rng.random((4, 1))
    kernel = GibbsKernel(line_cost(4), 0.2)
    reg = RegularizerSpec(0.2, 0.3, 0.3)
    from otbss.nmf import _coefficient_dual
    fun = _coefficient_dual(x, D, reg.rho1, kernel)
    g = np.zeros((4, 1))
    for _ in range(200000):
        _, grad = fun(g)
        g -= 0.01 * grad
    for method in ("agd", "lbfgs"):
        res = minimize_smooth(fun, np.zeros((4, 1)), SolverParams(method=method, tol=1e-11),
                              batched=True)
        np.testing.assert_allclose(res.x, g, atol=1e-5)


# coefficient update

def test_single_atom_recovers_scale():
    d = np.array([0.1, 0.4, 0.3, 0.2])
    x = 2.5 * d
    kernel = GibbsKernel(line_cost(4), 0.05)
    W, _ = update_coefficients(x[:, None], d[:, None], RegularizerSpec(0.05, 0.01, 0.01),
                               kernel, TIGHT)
    assert W[0, 0] == pytest.approx(2.5, abs=1e-4)


def test_coefficients_beat_grid_search():
    n = 4
    C = line_cost(n)
    gamma, rho1 = 0.1, 0.05
    D = np.full((n, 2), 0.02)
    D[0, 0] = D[3, 1] = 1.0
    D /= D.sum(0)
    rng = np.random.default_rng(3)
    X = rng.random((n, 2)) + 0.1
    W, _ = update_coefficients(X, D, RegularizerSpec(gamma, rho1, 1.0), GibbsKernel(C, gamma), TIGHT)
    for i in range(2):
        x = X[:, i]
        mass = x.sum()

        # D columns are on the simplex so feasibility pins w_0 + w_1 = mass
        s_grid = np.linspace(1e-6, mass - 1e-6, 2001)
        Wg = np.vstack([s_grid, mass - s_grid])
        grid = plain_sinkhorn_values(x, D @ Wg, C, gamma) + rho1 * np.array([xlogx(w) for w in Wg.T])
        best = grid.min()

        def primal(w):
            return ot_gamma(x, D @ w, C, gamma) + rho1 * xlogx(w)

        got = primal(W[:, i])
        assert got <= best * (1 + 1e-3) + 1e-9
        assert abs(got - best) <= 1e-3 * abs(best)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**31))
def test_coefficient_duality_gap_and_mass(seed):
    rng = np.random.default_rng(seed)
    n, k, t = 12, 3, 4
    C = line_cost(n)
    D = rng.random((n, k)) + 0.05
    D /= D.sum(0)
    X = rng.random((n, t))
    reg = RegularizerSpec(0.05, 0.05, 0.05)
    kernel = GibbsKernel(C, reg.gamma)
    W, dual = update_coefficients(X, D, reg, kernel, TIGHT)
    assert np.all(W > 0)
    np.testing.assert_allclose((D @ W).sum(0), X.sum(0), rtol=1e-6)
    for i in range(t):
        primal = ot_gamma(X[:, i], D @ W[:, i] * X[:, i].sum() / (D @ W[:, i]).sum(), C, reg.gamma)
        primal += reg.rho1 * xlogx(W[:, i])
        assert primal == pytest.approx(-dual.value[i], rel=1e-5)


def test_silent_columns_get_zero_weights():
    rng = np.random.default_rng(4)
    X = rng.random((5, 3))
    X[:, 1] = 0
    D = rng.random((5, 2))
    D /= D.sum(0)
    W, _ = update_coefficients(X, D, RegularizerSpec(0.1, 0.1, 0.1), GibbsKernel(line_cost(5), 0.1))
    assert np.all(W[:, 1] == 0)
    assert np.all(W[:, [0, 2]] > 0)


# dictionary update

def test_dictionary_identity_weights_match_columns():
    rng = np.random.default_rng(5)
    n, k = 8, 3
    X = rng.random((n, k)) ** 4
    X /= X.sum(0)
    C = line_cost(n)
    reg = RegularizerSpec(0.02, 0.01, 0.002)
    D, _ = update_dictionary(X, np.eye(k), reg, GibbsKernel(C, reg.gamma), TIGHT)
    np.testing.assert_allclose(D.sum(0), 1.0, atol=1e-8)
    assert np.all(D > 0)
    import itertools
    loss = lambda perm: sum(ot_gamma(X[:, i], D[:, p], C, reg.gamma)  # noqa: E731
                            for i, p in enumerate(perm))
    best = loss(range(k))
    for perm in itertools.permutations(range(k)):
        if perm != tuple(range(k)):
            assert best < loss(perm)


def test_dictionary_single_atom_grid_search():
    n = 3
    C = line_cost(n)
    h = np.array([0.6, 0.3, 0.1])
    X = np.column_stack([h, h])
    reg = RegularizerSpec(0.1, 0.1, 0.05)
    D, _ = update_dictionary(X, np.ones((1, 2)), reg, GibbsKernel(C, reg.gamma), TIGHT)

    def primal(d):
        return 2 * ot_gamma(h, d, C, reg.gamma) + reg.rho2 * xlogx(d)

    steps = np.linspace(1e-4, 1 - 1e-4, 301)
    cand = np.array([[a, b, 1 - a - b] for a in steps for b in steps if a + b < 1 - 1e-4]).T
    ents = np.sum(cand * np.log(cand), axis=0)
    best = (2 * plain_sinkhorn_values(h, cand, C, reg.gamma) + reg.rho2 * ents).min()
    got = primal(D[:, 0])
    assert got <= best + 1e-3 * abs(best)


def test_dead_atom_needs_fallback():
    X = np.random.default_rng(6).random((4, 3))
    W = np.array([[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])
    kernel = GibbsKernel(line_cost(4), 0.1)
    reg = RegularizerSpec(0.1, 0.1, 0.1)
    with pytest.raises(DegenerateWeights):
        update_dictionary(X, W, reg, kernel)
    fallback = np.full((4, 2), 0.25)
    D, _ = update_dictionary(X, W, reg, kernel, fallback_atoms=fallback)
    np.testing.assert_array_equal(D[:, 1], 0.25)


# full fit

def test_fit_single_frame_rank_one():
    h = np.array([0.05, 0.2, 0.5, 0.2, 0.05]) * 3
    C = line_cost(5)
    reg = RegularizerSpec(0.01, 0.01, 0.001)
    model = fit(h[:, None], 1, reg, C, FitOptions(solver=TIGHT, max_outer_iter=10))
    assert model.coefficients[0, 0] == pytest.approx(3.0, rel=1e-4)
    np.testing.assert_allclose(model.dictionary.atoms[:, 0], h / 3, atol=0.05)


def test_fit_trace_non_increasing_and_masses():
    rng = np.random.default_rng(7)
    X = rng.random((16, 20))
    C = line_cost(16)
    reg = RegularizerSpec.default(C, X, 3)
    model = fit(X, 3, reg, C, FitOptions(max_outer_iter=8))
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 1e-8 * np.abs(trace[1:]))
    np.testing.assert_allclose(model.dictionary.atoms.sum(0), 1.0, atol=1e-8)
    np.testing.assert_allclose(model.reconstruction().sum(0), X.sum(0), rtol=1e-3)


def test_fit_is_permutation_equivariant():
    rng = np.random.default_rng(8)
    n = 10
    X = rng.random((n, 6))
    i = np.arange(n, dtype=float)
    C = np.sqrt(np.abs(i[:, None] - i[None, :]))
    perm = rng.permutation(n)
    reg = RegularizerSpec(0.05, 0.05, 0.05)
    # accelerated gradient: L-BFGS stops at objective resolution, about 1e-7 apart
    opts = FitOptions(max_outer_iter=3, solver=SolverParams(method="agd", tol=1e-12, max_iter=20000))
    a = fit(X, 2, reg, C, opts)
    b = fit(X[perm], 2, reg, C[np.ix_(perm, perm)], opts)
    np.testing.assert_allclose(b.dictionary.atoms, a.dictionary.atoms[perm], atol=1e-10)


def test_fit_input_errors():
    C = line_cost(3)
    reg = RegularizerSpec(0.1, 0.1, 0.1)
    with pytest.raises(InvalidRank):
        fit(np.ones((3, 2)), 0, reg, C)
    with pytest.raises(NoTrainingFrames):
        fit(np.zeros((3, 2)), 1, reg, C)


def test_barycenter_init_on_simplex():
    rng = np.random.default_rng(9)
    X = rng.random((6, 4))
    D = barycenter_init(X, 3, GibbsKernel(line_cost(6), 0.1), rng)
    np.testing.assert_allclose(D.sum(0), 1.0)
    assert np.all(D >= 1e-12 / 2)


def test_primal_objective_matches_oracle():
    rng = np.random.default_rng(10)
    X = rng.random((5, 3))
    D = rng.random((5, 2))
    D /= D.sum(0)
    W = rng.random((2, 3))
    W *= X.sum(0) / (D @ W).sum(0)
    C = line_cost(5)
    reg = RegularizerSpec(0.1, 0.2, 0.3)
    expected = sum(ot_gamma(X[:, i], D @ W[:, i], C, 0.1) for i in range(3))
    expected += 0.2 * xlogx(W) + 0.3 * xlogx(D)
    assert primal_objective(X, D, W, reg, GibbsKernel(C, 0.1)) == pytest.approx(expected, rel=1e-8)


# Euclidean baseline

def test_euclidean_realizable():
    rng = np.random.default_rng(11)
    X = rng.random((8, 2)) @ rng.random((2, 10))
    model = fit_euclidean(X, 2)
    assert model.objective_trace[-1] < 1e-4 * model.objective_trace[0]
    assert np.all(np.diff(model.objective_trace) <= 1e-12)


def test_euclidean_nested_ranks():
    X = np.random.default_rng(12).random((8, 10))
    assert fit_euclidean(X, 2).objective_trace[-1] <= fit_euclidean(X, 1).objective_trace[-1]
