import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from sbmfit.fit import SamplerConfig
from sbmfit.harness.metrics import misclassification_count
from sbmfit.logit import (CovariateTable, LogitModel, _LogitObjective, alternating_fit,
                          bic_score, build_pair_design, cross_validate, degree_bin_covariate,
                          degree_bins, empty_design, logit_log_likelihood,
                          optimize_theta_beta, predict_proba, sample_graph)
from sbmfit.netcore import (BlockMatrix, ClassAssignment, DomainError, Graph, block_stats,
                            log_likelihood, n_pairs, profile_log_likelihood, theta_hat)
from sbmfit.synth import equal_assignment

from conftest import random_instance


def random_design(rng, n, n_cov=2, max_levels=4):
    cov = CovariateTable(n)
    for c in range(n_cov):
        L = int(rng.integers(2, max_levels + 1))
        vals = rng.integers(0, L, n)
        vals[:L] = np.arange(L)
        cov.add(f"c{c}", vals)
    return cov, build_pair_design(cov)


def test_effects_coding_two_levels():
    cov = CovariateTable(4).add("house", ["x", "x", "y", "y"])
    d = build_pair_design(cov)
    assert d.dim_beta == 1
    assert d.features(0, 1).tolist() == [1.0]
    assert d.features(2, 3).tolist() == [-1.0]
    assert d.features(0, 2).tolist() == [0.0]
    assert d.features(3, 1).tolist() == [0.0]


def test_effects_coding_no_shared_level_is_zero():
    cov = CovariateTable(3).add("a", [0, 1, 2]).add("b", ["u", "v", "w"])
    d = build_pair_design(cov)
    assert np.all(d.matrix() == 0.0)


def test_dim_beta_example():
    n = 10
    cov = CovariateTable(n)
    for name, L in zip("abcd", (9, 4, 2, 8)):
        cov.add(name, np.arange(n) % L)
    assert build_pair_design(cov).dim_beta == 19


def test_effects_coding_level_rows():
    cov = CovariateTable(6).add("a", [0, 0, 1, 1, 2, 2])
    X = build_pair_design(cov).features
    assert X(0, 1).tolist() == [1.0, 0.0]
    assert X(2, 3).tolist() == [0.0, 1.0]
    assert X(4, 5).tolist() == [-1.0, -1.0]


@given(st.lists(st.integers(2, 9), min_size=1, max_size=4), st.integers(0, 2**32 - 1))
def test_full_coefficients_sum_to_zero(levels, seed):
    cov = CovariateTable(12)
    for c, L in enumerate(levels):
        cov.add(f"c{c}", np.arange(12) % L)
    d = build_pair_design(cov)
    beta = np.random.default_rng(seed).normal(size=d.dim_beta)
    for full in d.full_coefficients(beta):
        assert abs(full.sum()) <= 1e-12 * max(1.0, np.abs(full).sum())
    # the feature dot product equals the full-level coefficient of the shared level
    X = d.matrix()
    fulls = d.full_coefficients(beta)
    expected = sum(np.where(sh >= 0, f[np.maximum(sh, 0)], 0.0) for sh, f in zip(d.shared, fulls))
    assert np.allclose(X @ beta, expected, atol=1e-12)


def test_covariate_table_errors():
    cov = CovariateTable(3).add("a", [0, 1, 1])
    with pytest.raises(DomainError):
        cov.add("a", [1, 0, 0])
    with pytest.raises(DomainError):
        cov.add("b", [1, 1, 1])
    with pytest.raises(DomainError):
        cov.add("c", [1, 0])


def test_degree_bins_regular():
    cyc = Graph(6, [(i, (i + 1) % 6) for i in range(6)])
    assert np.all(degree_bin_covariate(cyc) == 0)


def test_degree_bins_identity():
    # 0..7 is not a graphical sequence, so bin the degree vector directly
    assert degree_bins(np.arange(8), 8).tolist() == list(range(8))
    assert degree_bins(np.arange(8)[::-1], 8).tolist() == list(range(8))[::-1]


def test_degree_bins_star():
    g = Graph(10, [(0, j) for j in range(1, 10)])
    bins = degree_bin_covariate(g, 2)
    assert bins[0] == 1 and np.all(bins[1:] == 0)


def test_loglik_at_zero():
    g = Graph(5, [(0, 1), (2, 4)])
    m = LogitModel(2, np.zeros((2, 2)), [], ClassAssignment([0, 1, 0, 1, 1], 2))
    assert logit_log_likelihood(g, m, empty_design(5)) == pytest.approx(-10 * math.log(2))


def test_loglik_reduces_to_blockmodel(rng):
    for _ in range(50):
        g, _, z = random_instance(rng)
        tt = rng.normal(size=(z.k, z.k))
        tt = tt + tt.T
        m = LogitModel(z.k, tt, [], z)
        theta = BlockMatrix(1 / (1 + np.exp(-tt)))
        assert logit_log_likelihood(g, m, empty_design(g.n_nodes)) == pytest.approx(
            log_likelihood(g, z, theta), rel=1e-12, abs=1e-12)


def test_loglik_three_nodes_by_hand():
    cov = CovariateTable(3).add("a", ["p", "p", "q"])
    g = Graph(3, [(0, 1), (1, 2)])
    m = LogitModel(1, [[0.2]], [0.5], ClassAssignment([0, 0, 0], 1))
    want = (0.7 - math.log1p(math.exp(0.7))) - math.log1p(math.exp(0.2)) + (0.2 - math.log1p(math.exp(0.2)))
    assert logit_log_likelihood(g, m, build_pair_design(cov)) == pytest.approx(want, rel=1e-14)


def test_loglik_no_overflow():
    g = Graph(3, [(0, 1)])
    m = LogitModel(1, [[800.0]], [], ClassAssignment([0, 0, 0], 1))
    v = logit_log_likelihood(g, m, empty_design(3))
    assert np.isfinite(v) and v == pytest.approx(-1600.0)


def _fd_grad(obj, x, h=1e-5):
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (obj.value(x + e) - obj.value(x - e)) / (2 * h)
    return out


def test_gradient_matches_finite_differences(rng):
    for _ in range(20):
        g, _, z = random_instance(rng, n_min=6)
        _, d = random_design(rng, g.n_nodes)
        obj = _LogitObjective(g, z.labels, z.k, d, None)
        x = rng.normal(size=obj.dim)
        an, fd = obj.gradient(x), _fd_grad(obj, x)
        assert np.allclose(an, fd, rtol=1e-4, atol=1e-6)


def test_newton_converges_to_stationary_point(rng):
    for _ in range(20):
        n = int(rng.integers(12, 30))
        z = ClassAssignment(rng.integers(0, 2, n), 2)
        _, d = random_design(rng, n)
        m = LogitModel(2, [[0.5, -1.0], [-1.0, 0.3]], rng.normal(scale=0.3, size=d.dim_beta), z)
        g = sample_graph(m, d, int(rng.integers(1 << 30)))
        res = optimize_theta_beta(g, z, d)
        obj = _LogitObjective(g, z.labels, 2, d, None, res.ridge)
        x = np.concatenate([res.theta_tilde[np.triu_indices(2)], res.beta])
        assert np.max(np.abs(obj.gradient(x))) < 1e-6
        assert np.max(np.abs(_fd_grad(obj, x))) < 1e-4
        # no nearby point is better
        for _ in range(5):
            assert obj.value(x + rng.normal(scale=1e-3, size=len(x))) <= obj.value(x) + 1e-12


def test_no_covariates_recovers_block_proportions(rng):
    for _ in range(30):
        g, _, z = random_instance(rng, n_min=5)
        res = optimize_theta_beta(g, z, empty_design(g.n_nodes))
        th = theta_hat(block_stats(g, z)).vals
        sig = 1 / (1 + np.exp(-res.theta_tilde))
        inner = np.isfinite(th) & (th > 0) & (th < 1)
        assert np.allclose(sig[inner], th[inner], rtol=0, atol=1e-8)
        edge = np.isfinite(th) & ~inner
        if edge.any():
            assert any(f.startswith("separable_block") for f in res.flags)
            assert np.allclose(sig[edge], th[edge], atol=1e-5)


def test_separable_block_is_capped_and_flagged():
    # two cliques with no edges between them
    edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    edges += [(i, j) for i in range(4, 8) for j in range(i + 1, 8)]
    g = Graph(8, edges)
    z = ClassAssignment([0] * 4 + [1] * 4, 2)
    res = optimize_theta_beta(g, z, empty_design(8))
    assert "separable_block(0,0)" in res.flags and "separable_block(0,1)" in res.flags
    assert np.all(np.isfinite(res.theta_tilde))
    assert res.theta_tilde[0, 0] > 10 and res.theta_tilde[0, 1] < -10


def test_rank_deficient_design_flagged():
    # covariate constant within each class: the feature duplicates the block indicators
    n = 8
    z = ClassAssignment([0] * 4 + [1] * 4, 2)
    cov = CovariateTable(n).add("a", z.labels)
    g = Graph(n, [(0, 1), (0, 2), (1, 3), (4, 5), (5, 6), (0, 4), (2, 5), (3, 7)])
    res = optimize_theta_beta(g, z, build_pair_design(cov))
    assert "rank_deficient" in res.flags
    assert np.all(np.isfinite(res.theta_tilde)) and np.all(np.isfinite(res.beta))


def test_k1_is_logistic_regression(rng):
    n = 30
    cov, d = random_design(rng, n)
    z = ClassAssignment(np.zeros(n, dtype=int), 1)
    g = sample_graph(LogitModel(1, [[-1.0]], rng.normal(size=d.dim_beta), z), d, 4)
    m = alternating_fit(g, cov, 1, SamplerConfig(k=1, n_sweeps=2, restarts=1))

    # independent oracle: generic quasi-Newton on an intercept + features loss
    X = np.column_stack([np.ones(n_pairs(n)), d.matrix()])
    y = g.condensed().astype(float)

    def nll(w):
        eta = X @ w
        return np.sum(np.logaddexp(0, eta) - y * eta)

    ref = minimize(nll, np.zeros(X.shape[1]), method="BFGS", options={"gtol": 1e-10})
    assert m.loglik == pytest.approx(-ref.fun, rel=1e-9)
    assert m.theta_tilde[0, 0] == pytest.approx(ref.x[0], abs=1e-4)
    assert np.allclose(m.beta, ref.x[1:], atol=1e-4)


def test_permutation_equivariance(rng):
    n = 20
    cov, d = random_design(rng, n)
    z = ClassAssignment(rng.integers(0, 3, n), 3)
    g = sample_graph(LogitModel(3, np.eye(3) * 2 - 1, rng.normal(size=d.dim_beta), z), d, 9)
    perm = np.array([2, 0, 1])
    zp = ClassAssignment(perm[z.labels], 3)
    r1 = optimize_theta_beta(g, z, d)
    r2 = optimize_theta_beta(g, zp, d)
    p1 = predict_proba(LogitModel(3, r1.theta_tilde, r1.beta, z), d)
    p2 = predict_proba(LogitModel(3, r2.theta_tilde, r2.beta, zp), d)
    assert np.allclose(p1, p2, atol=1e-9)
    assert np.allclose(r2.theta_tilde[np.ix_(perm, perm)], r1.theta_tilde, atol=1e-7)


def test_alternating_fit_recovers_strong_blocks():
    n = 80
    z = equal_assignment(n, 2)
    cov = CovariateTable(n).add("sex", np.arange(n) % 2)
    d = build_pair_design(cov)
    truth = LogitModel(2, [[0.5, -3.0], [-3.0, 0.5]], [0.7], z)
    g = sample_graph(truth, d, 17)
    m = alternating_fit(g, cov, 2, SamplerConfig(k=2, seed=1))
    assert misclassification_count(z, m.z) == 0
    assert np.all(np.diff(m.trace) >= 0)
    assert m.loglik == pytest.approx(logit_log_likelihood(g, m, d))


def test_alternating_fit_without_covariates_matches_profile(rng):
    for seed in range(5):
        g, _, _ = random_instance(rng, n_min=15, n_max=25)
        m = alternating_fit(g, None, 2, SamplerConfig(k=2, seed=seed, n_sweeps=40))
        assert m.loglik == pytest.approx(profile_log_likelihood(g, m.z), abs=1e-5)


def test_bic_algebra():
    g = Graph(6, [(0, 1), (1, 2), (3, 4)])
    z1 = ClassAssignment([0] * 6, 1)
    res = optimize_theta_beta(g, z1, empty_design(6))
    m1 = LogitModel(1, res.theta_tilde, res.beta, z1)
    ll = logit_log_likelihood(g, m1, empty_design(6))
    assert bic_score(g, m1, empty_design(6)) == pytest.approx(-2 * ll + math.log(15))
    # K=2 with every block equal to the K=1 fit: same likelihood, two extra parameters
    m2 = LogitModel(2, np.full((2, 2), res.theta_tilde[0, 0]), [], ClassAssignment([0, 1] * 3, 2))
    assert bic_score(g, m2, empty_design(6)) - bic_score(g, m1, empty_design(6)) == pytest.approx(
        2 * math.log(15), rel=1e-12)


def test_cv_er_matches_entropy():
    from sbmfit.synth import gen_er
    p = 0.2
    g, _ = gen_er(60, p, 5)
    h = -(p * math.log(p) + (1 - p) * math.log(1 - p))
    res = cross_validate(g, None, 1, cfg=SamplerConfig(k=1, n_sweeps=2, restarts=1))
    # sampling noise on the held-out mean over ~1770 pairs is about 0.01
    assert res.nll == pytest.approx(h, abs=0.04)
    assert len(res.fold_nll) == 5


def test_cv_single_class_close_to_full_data_nll():
    from sbmfit.synth import gen_er
    g, _ = gen_er(80, 0.1, 2)
    ph = g.edge_count / n_pairs(80)
    full = -(ph * math.log(ph) + (1 - ph) * math.log(1 - ph))
    res = cross_validate(g, None, 1, cfg=SamplerConfig(k=1, n_sweeps=2, restarts=1), seed=3)
    assert res.nll == pytest.approx(full, rel=0.01)


def test_cv_fold_count_checked():
    with pytest.raises(DomainError):
        cross_validate(Graph(4, [(0, 1)]), None, 1, folds=1)
