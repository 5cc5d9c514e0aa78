import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from precis.core import CovarianceEstimate, DataMatrix
from precis.dag import (DagModel, debias_dag_column, fit_dag, is_acyclic_for, predecessor_regression,
                        score_ordering, search_ordering, surrogate_inverse)
from precis.errors import TooLargeForExhaustive, ValidationError
from precis.simbench import make_dag_instance


def _chain(p, beta=0.8, omega=1.0):
    return make_dag_instance(p, omega=omega, edges=[(k, k + 1, beta) for k in range(p - 1)])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8), st.floats(0.1, 3.0))
def test_precision_identity(seed, p, omega):
    m = make_dag_instance(p, edge_prob=0.4, beta_range=(0.2, 0.9), omega=omega, seed=seed)
    np.testing.assert_allclose(m.theta0() @ m.sigma0(), np.eye(p), atol=1e-10)
    assert is_acyclic_for(m.b, m.ordering)


def test_model_validation():
    with pytest.raises(ValidationError):
        DagModel(np.array([[0, 1.0], [1.0, 0]]), 1.0, (0, 1))
    with pytest.raises(ValidationError):
        DagModel(np.array([[0, 1.0], [0, 0]]), 1.0, (1, 0))
    with pytest.raises(ValidationError):
        DagModel(np.zeros((2, 2)), 0.0, (0, 1))
    m = DagModel(np.array([[0, 1.0], [0, 0]]), 1.0, (0, 1))
    assert m.parents == (frozenset(), frozenset({0}))
    assert m.consistent_with((0, 1)) and not m.consistent_with((1, 0))


def test_sampling_matches_population_covariance():
    m = make_dag_instance(5, edge_prob=0.5, seed=3)
    x = m.sample(200_000, np.random.default_rng(0)).values
    np.testing.assert_allclose(x.T @ x / x.shape[0], m.sigma0(), atol=0.03 * np.abs(m.sigma0()).max())


def _matrix_form(data, sc):
    """tr(Theta S) - log det Theta for the fitted B and pooled omega."""
    S = data.values.T @ data.values / data.n
    a = np.eye(data.p) - sc.b_hat
    theta = a @ a.T / sc.omega_hat_sq
    return np.trace(theta @ S) - np.linalg.slogdet(theta)[1]


@pytest.mark.parametrize("seed", range(5))
def test_score_matches_matrix_likelihood(seed):
    m = make_dag_instance(3, edge_prob=0.7, seed=seed)
    data = m.sample(300, np.random.default_rng(seed))
    for pi in itertools.permutations(range(3)):
        sc = score_ordering(data, pi, lam=0.1)
        assert sc.score + 3 == pytest.approx(_matrix_form(data, sc) + 0.01 * sc.edge_count, abs=1e-8)
        assert sc.edge_count == np.count_nonzero(sc.b_hat)


def test_two_node_strong_edge_prefers_true_direction():
    # equal noise: the reverse direction must inflate one residual variance
    m = make_dag_instance(2, omega=0.1, edges=[(0, 1, 1.0)])
    for seed in range(20):
        data = m.sample(500, np.random.default_rng(seed))
        assert score_ordering(data, (0, 1)).score < score_ordering(data, (1, 0)).score


def _subset_oracle(data, pi, lam):
    x = data.values
    n, p = data.n, data.p
    options = []
    for t, j in enumerate(pi):
        pred = pi[:t]
        node = []
        for r in range(len(pred) + 1):
            for sub in itertools.combinations(pred, r):
                if sub:
                    coef = np.linalg.lstsq(x[:, sub], x[:, j], rcond=None)[0]
                    res = x[:, j] - x[:, sub] @ coef
                else:
                    res = x[:, j]
                node.append((res @ res, len(sub)))
        options.append(node)
    best = np.inf
    for combo in itertools.product(*options):
        rss = sum(c[0] for c in combo)
        s = sum(c[1] for c in combo)
        best = min(best, p * np.log(rss / (n * p)) + lam**2 * s)
    return best


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.2, 0.5, 2.0])
def test_support_selection_matches_subset_enumeration(lam):
    m = _chain(3, beta=0.3)
    data = m.sample(200, np.random.default_rng(1))
    for pi in itertools.permutations(range(3)):
        assert score_ordering(data, pi, lam).score == pytest.approx(_subset_oracle(data, pi, lam), abs=1e-10)


def test_empty_graph_ties_broken_lexicographically():
    data = DataMatrix(np.random.default_rng(0).standard_normal((100, 2)))
    scores = {pi: score_ordering(data, pi, lam=5.0).score for pi in itertools.permutations(range(2))}
    assert len(set(scores.values())) == 1
    assert search_ordering(data, lam=5.0).ordering == (0, 1)
    data3 = DataMatrix(np.random.default_rng(1).standard_normal((100, 3)))
    assert search_ordering(data3, lam=5.0).ordering == (0, 1, 2)


def test_chain_ordering_recovered_and_greedy_agrees():
    m = _chain(3, omega=0.5)
    data = m.sample(1000, np.random.default_rng(5))
    ex = search_ordering(data, mode="exhaustive")
    assert m.consistent_with(ex.ordering)
    brute = min(score_ordering(data, pi).score for pi in itertools.permutations(range(3)))
    assert ex.score == brute
    assert search_ordering(data, mode="greedy", seed=0).score == ex.score


@pytest.mark.parametrize("seed", range(3))
def test_greedy_matches_exhaustive_on_random_dags(seed):
    m = make_dag_instance(6, edge_prob=0.4, seed=seed)
    data = m.sample(800, np.random.default_rng(seed))
    ex = search_ordering(data)
    gr = search_ordering(data, mode="greedy", seed=seed)
    assert gr.score == pytest.approx(ex.score, abs=1e-12)
    assert search_ordering(data, mode="greedy", seed=seed).ordering == gr.ordering


def test_exhaustive_size_limit():
    data = DataMatrix(np.random.default_rng(0).standard_normal((50, 10)))
    with pytest.raises(TooLargeForExhaustive):
        search_ordering(data, mode="exhaustive")
    assert len(search_ordering(data, mode="greedy").ordering) == 10
    with pytest.raises(ValidationError):
        search_ordering(data, mode="sideways")


def test_predecessor_regression_examples():
    x = np.column_stack([np.tile([1.0, -1.0], 50), np.repeat([1.0, -1.0], 50)])
    assert not predecessor_regression(DataMatrix(x), (0, 1), 1).any()
    assert predecessor_regression(DataMatrix(x), (0, 1), 0).size == 0
    m = make_dag_instance(4, edge_prob=0.6, seed=2)
    data = m.sample(500, np.random.default_rng(2))
    pi = m.ordering
    j = pi[-1]
    pred = list(pi[:-1])
    ols = np.linalg.lstsq(data.values[:, pred], data.values[:, j], rcond=None)[0]
    np.testing.assert_allclose(predecessor_regression(data, pi, j, 0.0), ols, atol=1e-8)


def test_chain_last_node_weights():
    m = _chain(3)
    data = m.sample(2000, np.random.default_rng(9))
    np.testing.assert_allclose(predecessor_regression(data, (0, 1, 2), 2), [0.0, 0.8], atol=0.05)


def test_single_predecessor_gives_ols_slope():
    m = _chain(2)
    data = m.sample(300, np.random.default_rng(4))
    x = data.values
    pred, beta, b, sig, om = debias_dag_column(data, (0, 1), 1, lam_j=0.3)
    assert pred == (0,)
    assert beta[0] < x[:, 0] @ x[:, 1] / (x[:, 0] @ x[:, 0])
    assert b[0] == pytest.approx(x[:, 0] @ x[:, 1] / (x[:, 0] @ x[:, 0]), rel=1e-12)
    assert sig[0] == pytest.approx(om / np.sqrt(x[:, 0] @ x[:, 0] / 300), rel=1e-12)


def test_correction_vanishes_at_least_squares():
    m = make_dag_instance(5, edge_prob=0.5, seed=6)
    data = m.sample(400, np.random.default_rng(6))
    for j in m.ordering[1:]:
        _, beta, b, _, _ = debias_dag_column(data, m.ordering, j, lam_j=0.0, lam_kj=0.0)
        np.testing.assert_allclose(b, beta, atol=1e-10)


def test_surrogate_inverse_exact_without_penalty():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((100, 4))
    G = x.T @ x / 100
    np.testing.assert_allclose(surrogate_inverse(CovarianceEstimate.from_sigma(G, n=100), 0.0),
                               np.linalg.inv(G), atol=1e-9)


def test_known_ordering_bypass():
    m = _chain(2)
    data = m.sample(200, np.random.default_rng(8))
    fit = fit_dag(data, known_ordering=(0, 1))
    assert fit.score is None
    pred, beta, b, sig, om = debias_dag_column(data, (0, 1), 1)
    assert fit.predecessors == ((), pred)
    np.testing.assert_array_equal(fit.b_debiased[1], b)
    np.testing.assert_array_equal(fit.sigma_kj[1], sig)
    assert fit.omega_hat[1] == om
    rows = fit.intervals(0.05)
    assert len(rows) == 1 and rows[0][:2] == (0, 1)
    assert rows[0][4] < rows[0][3] < rows[0][5]
    with pytest.raises(ValidationError):
        fit_dag(data, known_ordering=(0, 0))


def test_empty_graph_intervals_cover_zero():
    covered = total = 0
    for seed in range(50):
        data = DataMatrix(np.random.default_rng(1000 + seed).standard_normal((300, 4)))
        for row in fit_dag(data).intervals(0.05):
            covered += row[4] <= 0 <= row[5]
            total += 1
    assert covered / total >= 0.90


def test_fit_is_thread_independent():
    m = make_dag_instance(6, edge_prob=0.4, seed=11)
    data = m.sample(500, np.random.default_rng(11))
    a = fit_dag(data, threads=1)
    b = fit_dag(data, threads=3)
    assert a.ordering_hat == b.ordering_hat
    np.testing.assert_array_equal(a.debiased_matrix(), b.debiased_matrix())
