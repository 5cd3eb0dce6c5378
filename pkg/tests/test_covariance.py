import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pplasso.covariance import (
    EstimatorCandidate,
    cv_select,
    default_candidates,
    estimate,
    pooled_arm_centered,
    sample_correlation,
    symmetric_roots,
    whiten,
)

from oracles import lw_offdiag_loops, pearson_loops


def _correlated(rng, n, sigma):
    L = np.linalg.cholesky(sigma)
    return rng.standard_normal((n, sigma.shape[0])) @ L.T


def _compound(p, rho):
    S = np.full((p, p), rho)
    np.fill_diagonal(S, 1.0)
    return S


# -- sample correlation ------------------------------------------------------


def test_identical_columns_fully_correlated():
    x = np.array([1.0, 3.0, 2.0, 5.0])
    R = sample_correlation(np.c_[x, x])
    assert R[0, 1] == pytest.approx(1.0)


def test_orthogonal_columns_give_identity():
    X = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    np.testing.assert_allclose(sample_correlation(X), np.eye(2), atol=1e-15)


def test_fixed_integer_matrix_matches_loops():
    X = np.array([[1, 4, 2], [3, 1, 7], [2, 2, 2], [5, 9, 1], [4, 0, 3]], dtype=float)
    np.testing.assert_allclose(sample_correlation(X), pearson_loops(X), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 12), p=st.integers(1, 5))
def test_sample_correlation_properties(seed, n, p):
    X = np.random.default_rng(seed).standard_normal((n, p))
    R = sample_correlation(X)
    np.testing.assert_allclose(R, R.T, atol=1e-10)
    np.testing.assert_allclose(np.diag(R), 1.0, atol=1e-8)
    assert np.all(np.abs(R) <= 1.0)
    np.testing.assert_allclose(R, pearson_loops(X), atol=1e-10)


def test_zero_variance_column_is_named():
    X = np.c_[np.arange(5.0), np.ones(5), np.arange(5.0) ** 2]
    with pytest.raises(ValueError, match="column 1"):
        sample_correlation(X)


def test_needs_two_rows():
    with pytest.raises(ValueError):
        sample_correlation(np.ones((1, 3)))


# -- estimators --------------------------------------------------------------


def test_hard_threshold_zero_is_sample():
    X = np.random.default_rng(0).standard_normal((20, 6))
    np.testing.assert_allclose(estimate(EstimatorCandidate("hard-threshold", {"gamma": 0.0}), X),
                               sample_correlation(X))


def test_hard_threshold_zeroes_small_entries():
    X = np.random.default_rng(1).standard_normal((20, 6))
    R = sample_correlation(X)
    E = estimate(EstimatorCandidate("hard-threshold", {"gamma": 0.2}), X)
    small = (np.abs(R) < 0.2) & ~np.eye(6, dtype=bool)
    assert np.all(E[small] == 0)
    np.testing.assert_allclose(E[~small], R[~small])


def test_full_shrinkage_gives_identity():
    X = np.random.default_rng(2).standard_normal((15, 5))
    E = estimate(EstimatorCandidate("linear-shrinkage-LW", {"shrinkage": 1.0}), X)
    np.testing.assert_allclose(E, np.eye(5))


def test_dense_target_full_shrinkage():
    X = np.random.default_rng(3).standard_normal((15, 5))
    R = sample_correlation(X)
    E = estimate(EstimatorCandidate("dense-linear-shrinkage", {"shrinkage": 1.0}), X)
    rbar = R[~np.eye(5, dtype=bool)].mean()
    np.testing.assert_allclose(E[~np.eye(5, dtype=bool)], rbar)
    np.testing.assert_allclose(np.diag(E), 1.0)


def test_lw_intensity_matches_loop_oracle():
    X = np.random.default_rng(4).standard_normal((25, 7))
    R = sample_correlation(X)
    s = lw_offdiag_loops(X)
    E = estimate(EstimatorCandidate("linear-shrinkage-LW"), X)
    np.testing.assert_allclose(E, (1 - s) * R + s * np.eye(7), atol=1e-12)
    assert 0 < s <= 1


def _rank_one_data(seed, p=6, n=200):
    rng = np.random.default_rng(seed)
    load = rng.uniform(0.5, 0.9, p)
    true = np.outer(load, load)
    np.fill_diagonal(true, 1.0)
    X = rng.standard_normal((n, 1)) * load + rng.standard_normal((n, p)) * np.sqrt(1 - load**2)
    return X, true


def test_poet_matches_eigen_oracle_on_rank_one_data():
    X, _ = _rank_one_data(5)
    R = sample_correlation(X)
    # independent oracle: top eigenpair plus the diagonal of the residual
    vals, vecs = np.linalg.eigh(R)
    lead = vals[-1] * np.outer(vecs[:, -1], vecs[:, -1])
    oracle = lead + np.diag(np.diag(R - lead))
    E = estimate(EstimatorCandidate("poet", {"k": 1, "lambda": 1.0}), X)
    np.testing.assert_allclose(E, oracle, atol=1e-10)
    E = estimate(EstimatorCandidate("poet", {"k": 1, "lambda": 0.0}), X)
    np.testing.assert_allclose(E, R, atol=1e-12)


@pytest.mark.xfail(strict=True, reason=(
    "with only 6 variables the leading eigenvector of a unit-diagonal matrix "
    "overstates the loadings, so dropping the residual adds more bias than noise"))
def test_poet_closer_to_truth_than_sample_at_small_p():
    wins = 0
    for seed in range(20):
        X, true = _rank_one_data(seed)
        E = estimate(EstimatorCandidate("poet", {"k": 1, "lambda": 0.2}), X)
        wins += np.linalg.norm(E - true) < np.linalg.norm(sample_correlation(X) - true)
    assert wins > 10


def test_poet_rejects_too_many_factors():
    X = np.random.default_rng(6).standard_normal((5, 8))
    with pytest.raises(ValueError, match="below"):
        estimate(EstimatorCandidate("poet", {"k": 5, "lambda": 0.1}), X)


@pytest.mark.parametrize("kind, hp", [
    ("hard-threshold", {"gamma": 1.5}),
    ("hard-threshold", {}),
    ("poet", {"k": 0, "lambda": 0.1}),
    ("poet", {"k": 1.5, "lambda": 0.1}),
    ("poet", {"k": 1, "lambda": -0.1}),
    ("linear-shrinkage-LW", {"shrinkage": 2.0}),
    ("tapering", {}),
])
def test_invalid_candidates_rejected(kind, hp):
    with pytest.raises(ValueError):
        EstimatorCandidate(kind, hp)


@pytest.mark.parametrize("cand", default_candidates(), ids=lambda c: c.label)
def test_estimates_are_symmetric_with_unit_diagonal(cand):
    X = _correlated(np.random.default_rng(7), 30, _compound(10, 0.4))
    E = estimate(cand, X)
    np.testing.assert_allclose(E, E.T, atol=1e-10)
    np.testing.assert_allclose(np.diag(E), 1.0, atol=1e-8)


@pytest.mark.parametrize("cand", default_candidates(), ids=lambda c: c.label)
def test_estimation_error_falls_with_n(cand):
    p = 4
    true = _compound(p, 0.5)
    wins = 0
    for rep in range(10):
        rng = np.random.default_rng(100 + rep)
        small = estimate(cand, _correlated(rng, 50 * p, true))
        large = estimate(cand, _correlated(rng, 800 * p, true))
        wins += np.linalg.norm(large - true) < np.linalg.norm(small - true)
    assert wins > 5


# -- cross-validated selection ----------------------------------------------


def test_single_candidate_returned():
    X = np.random.default_rng(8).standard_normal((20, 4))
    cand = EstimatorCandidate("sample")
    best, table = cv_select([cand], X)
    assert best == cand and len(table) == 1


def test_lw_beats_sample_under_identity():
    wins = 0
    for rep in range(20):
        X = np.random.default_rng(200 + rep).standard_normal((60, 50))
        _, table = cv_select([EstimatorCandidate("sample"),
                              EstimatorCandidate("linear-shrinkage-LW")], X, seed=rep)
        risk = {c.kind: r for c, r in table}
        wins += risk["linear-shrinkage-LW"] <= risk["sample"]
    assert wins > 10


def test_winner_has_minimum_risk_and_table_is_sorted():
    X = _correlated(np.random.default_rng(9), 40, _compound(12, 0.3))
    best, table = cv_select(default_candidates(), X)
    risks = [r for _, r in table]
    assert table[0][0] == best
    assert risks == sorted(risks)
    assert len(table) == len(default_candidates())


def test_risk_is_mean_fold_frobenius_distance():
    X = np.random.default_rng(10).standard_normal((20, 5))
    cand = EstimatorCandidate("sample")
    _, table = cv_select([cand], X, folds=2, seed=3)
    perm = np.random.default_rng(3).permutation(20)
    halves = np.array_split(perm, 2)
    expected = np.mean([
        np.sum((pearson_loops(X[halves[1 - i]]) - pearson_loops(X[halves[i]])) ** 2)
        for i in range(2)
    ])
    assert table[0][1] == pytest.approx(expected, rel=1e-10)


def test_winner_invariant_to_candidate_order():
    X = _correlated(np.random.default_rng(11), 40, _compound(12, 0.3))
    cands = default_candidates()
    best, _ = cv_select(cands, X)
    for seed in range(3):
        shuffled = [cands[i] for i in np.random.default_rng(seed).permutation(len(cands))]
        assert cv_select(shuffled, X)[0] == best


def test_ties_keep_first_occurrence():
    X = np.random.default_rng(12).standard_normal((20, 4))
    a = EstimatorCandidate("sample")
    b = EstimatorCandidate("hard-threshold", {"gamma": 0.0})
    assert cv_select([a, b], X)[0] == a
    assert cv_select([b, a], X)[0] == b


def test_cv_select_errors():
    X = np.random.default_rng(13).standard_normal((9, 3))
    with pytest.raises(ValueError, match="no candidate"):
        cv_select([], X)
    with pytest.raises(ValueError, match="folds"):
        cv_select([EstimatorCandidate("sample")], X, folds=5)
    with pytest.raises(ValueError):
        cv_select([EstimatorCandidate("sample")], X, folds=1)


# -- roots ---------------------------------------------------------------------


def test_identity_roots():
    cov = symmetric_roots(np.eye(4))
    np.testing.assert_allclose(cov.sqrt, np.eye(4), atol=1e-15)
    np.testing.assert_allclose(cov.inv_sqrt, np.eye(4), atol=1e-15)


def test_two_by_two_root_squares_back():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    cov = symmetric_roots(S)
    np.testing.assert_allclose(cov.sqrt @ cov.sqrt, S, atol=1e-10)


def test_rank_deficient_input_is_floored():
    x = np.random.default_rng(14).standard_normal((30, 3))
    S = sample_correlation(np.c_[x, x[:, 0]])
    cov = symmetric_roots(S)
    assert np.all(np.isfinite(cov.inv_sqrt))
    vals, vecs = np.linalg.eigh(S)
    floored = (vecs * np.maximum(vals, 1e-8 * vals.max())) @ vecs.T
    np.testing.assert_allclose(cov.sqrt @ cov.sqrt, floored, atol=1e-6)
    np.testing.assert_allclose(cov.inv_sqrt @ cov.sqrt, np.eye(4), atol=1e-6)


def test_roots_reject_asymmetric_input():
    with pytest.raises(ValueError, match="symmetric"):
        symmetric_roots(np.array([[1.0, 0.2], [0.1, 1.0]]))
    with pytest.raises(ValueError):
        symmetric_roots(np.eye(2), floor_ratio=1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), p=st.integers(1, 8))
def test_root_invariants(seed, p):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((p + 3, p))
    S = sample_correlation(G) if p > 1 else np.eye(1)
    S = 0.5 * S + 0.5 * np.eye(p)
    cov = symmetric_roots(S)
    np.testing.assert_allclose(cov.sqrt, cov.sqrt.T, atol=1e-12)
    assert np.linalg.norm(cov.sqrt @ cov.sqrt - S) <= 1e-6
    assert np.linalg.norm(cov.inv_sqrt @ cov.sqrt - np.eye(p)) <= 1e-6
    again = symmetric_roots(cov.sqrt @ cov.sqrt)
    np.testing.assert_allclose(again.sqrt, cov.sqrt, atol=1e-8)


def test_pooling_centers_each_arm():
    rng = np.random.default_rng(15)
    x1 = rng.standard_normal((5, 3)) + 10
    x2 = rng.standard_normal((4, 3)) - 3
    pooled = pooled_arm_centered(x1, x2)
    np.testing.assert_allclose(pooled[:5].mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(pooled[5:].mean(0), 0, atol=1e-12)


def test_whitening_decorrelates_population():
    S = _compound(5, 0.6)
    cov = symmetric_roots(S)
    np.testing.assert_allclose(cov.inv_sqrt @ S @ cov.inv_sqrt, np.eye(5), atol=1e-10)
    X = np.ones((2, 5))
    np.testing.assert_allclose(whiten(X, cov), X @ cov.inv_sqrt)
