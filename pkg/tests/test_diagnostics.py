import json

import numpy as np
import pytest

from indweights import (
    DataError,
    Dataset,
    MomentSpec,
    WeightVector,
    balance_table,
    effective_sample_size,
    gps_normal_weights,
    independence_weights,
    stabilized_gps_ratios,
    weighted_correlation,
)
from indweights.diagnostics import balance_features, exposure_features


def linear_normal(rng, n, p=3, strength=1.0):
    x = rng.standard_normal((n, p))
    a = strength * x @ np.linspace(1.0, 0.4, p) + rng.standard_normal(n)
    return Dataset(x, a)


def test_ess_examples():
    assert effective_sample_size([1, 1, 1, 1]) == 4.0
    assert effective_sample_size([2, 2, 0, 0]) == 2.0
    w = WeightVector.normalized(np.random.default_rng(0).exponential(size=50))
    assert effective_sample_size(w) <= 50


def test_weighted_correlation(rng):
    x = rng.standard_normal(40)
    a = x + rng.standard_normal(40)
    w = WeightVector.normalized(rng.exponential(size=40))
    assert weighted_correlation(x, x, w) == pytest.approx(1.0)
    assert weighted_correlation(x, a, np.ones(40)) == pytest.approx(np.corrcoef(x, a)[0, 1], abs=1e-12)
    with pytest.raises(DataError, match="degenerate column"):
        weighted_correlation(np.ones(40), a, w)
    big = rng.standard_normal(4000)
    assert abs(weighted_correlation(big, rng.permutation(big), np.ones(4000))) < 3 / np.sqrt(4000)


def test_balance_features_rules():
    x = np.column_stack([np.arange(6.0), [0, 1, 0, 1, 1, 0]])
    names, feats = balance_features(x, max_covariate_power=3)
    assert names == ["x1", "x1^2", "x1^3", "x2", "x1*x2"]
    np.testing.assert_array_equal(feats[:, 3], x[:, 1])
    names, _ = balance_features(x, max_covariate_power=2, include_interactions=False)
    assert names == ["x1", "x1^2", "x2"]
    assert exposure_features(np.arange(5.0), 3).shape == (5, 3)


def oracle_table(x_feats, a_feats):
    out = []
    for j in range(x_feats.shape[1]):
        for k in range(a_feats.shape[1]):
            out.append(abs(np.corrcoef(x_feats[:, j], a_feats[:, k])[0, 1]))
    return np.array(out)


def test_uniform_table_matches_unweighted_oracle(rng):
    d = linear_normal(rng, 120, p=2)
    rep = balance_table(d, np.ones(d.n), max_exposure_power=3, max_covariate_power=2)
    _, feats = balance_features(d.covariates, 2, True)
    corr = oracle_table(feats, exposure_features(d.exposure, 3))
    assert rep.n_pairs == corr.size
    assert rep.corr_mean == pytest.approx(corr.mean(), abs=1e-10)
    assert rep.corr_max == pytest.approx(corr.max(), abs=1e-10)
    assert rep.corr_median == pytest.approx(np.median(corr), abs=1e-10)
    assert rep.corr_p95 == pytest.approx(np.percentile(corr, 95), abs=1e-10)
    assert rep.corr_sd == pytest.approx(corr.std(ddof=1), abs=1e-10)
    assert rep.ess == pytest.approx(d.n)


def test_report_ordering_and_serialization(rng):
    d = linear_normal(rng, 80)
    res = independence_weights(d)
    rep = balance_table(d, res.weights)
    assert 0 < rep.ess <= d.n
    assert 0 <= rep.corr_median <= rep.corr_p95 <= rep.corr_max <= 1 + 1e-9
    out = json.loads(rep.to_json())
    assert out["criterion"]["total"] == pytest.approx(res.criterion.total)
    text = rep.render("dcow")
    rows = [line.split("  ")[0] for line in text.splitlines()[1:6]]
    assert rows[0].startswith("criterion") and "V2" in text and "ESS" in text


def test_randomized_exposure_has_small_correlations():
    hits = 0
    for seed in range(20):
        g = np.random.default_rng(seed)
        d = Dataset(g.standard_normal((400, 2)), g.standard_normal(400))
        rep = balance_table(d, np.ones(400), max_exposure_power=1, max_covariate_power=1)
        hits += rep.corr_max < 4 / np.sqrt(400)
    assert hits >= 19


def test_moment_constraints_zero_first_order_correlations(rng):
    d = linear_normal(rng, 150)
    res = independence_weights(d, moment_constraints=MomentSpec.first_order())
    rep = balance_table(d, res.weights, max_exposure_power=1, max_covariate_power=1, include_interactions=False)
    assert rep.corr_max <= 1e-6
    full = balance_table(d, res.weights)
    assert np.isfinite(full.corr_max)


def test_duplicated_columns_give_identical_entries(rng):
    x = rng.standard_normal(60)
    d = Dataset(np.column_stack([x, x]), x + rng.standard_normal(60))
    rep = balance_table(d, np.ones(60), max_exposure_power=1, max_covariate_power=1, include_interactions=False)
    assert rep.n_pairs == 2 and rep.corr_sd == pytest.approx(0.0, abs=1e-12)


def test_degenerate_features_are_counted(rng):
    d = Dataset(np.column_stack([rng.standard_normal(30), np.ones(30)]), rng.standard_normal(30))
    rep = balance_table(d, np.ones(30), include_interactions=False)
    assert rep.n_skipped == 1


def test_gps_independent_exposure_near_uniform(rng):
    d = Dataset(rng.standard_normal((1000, 2)), rng.standard_normal(1000))
    w = gps_normal_weights(d)
    assert w.label == "gps-normal"
    assert effective_sample_size(w) >= 0.9 * d.n
    assert np.abs(w.values - 1).max() < 0.5


def test_gps_raw_weights_mean_one_and_balance(rng):
    # moderate confounding keeps the variance of the ratios finite
    d = linear_normal(rng, 5000, strength=0.5)
    raw = stabilized_gps_ratios(d)
    assert abs(raw.mean() - 1) < 0.05
    w = raw / raw.mean()
    for j in range(d.p):
        x = d.covariates[:, j]
        se = np.sqrt(np.var(w * x - x, ddof=1) / d.n)
        assert abs(np.mean(w * x) - x.mean()) < 3 * se


def test_gps_reduces_dcov(rng):
    from indweights import pairwise_distances, weighted_dcov

    d = linear_normal(rng, 2000, strength=0.5)
    ds = pairwise_distances(d)
    assert weighted_dcov(ds, gps_normal_weights(d)) < 0.2 * weighted_dcov(ds, np.ones(d.n))


def test_gps_truncation(rng):
    # one extreme unit dominates the raw ratios
    x = rng.standard_normal((300, 1))
    a = 3 * x[:, 0] + 0.05 * rng.standard_normal(300)
    a[0] = 6.0
    d = Dataset(x, a)
    raw = stabilized_gps_ratios(d)
    scaled = raw * d.n / raw.sum()
    assert scaled.max() > 20
    w = gps_normal_weights(d, truncate_at=20)
    assert w.values.sum() == pytest.approx(d.n)
    capped = np.minimum(scaled, 20)
    np.testing.assert_allclose(w.values, capped * d.n / capped.sum())


def test_gps_errors():
    d = Dataset(np.eye(4)[:, :3], np.arange(4.0))
    with pytest.raises(DataError, match="n > p"):
        gps_normal_weights(d)
    x = np.arange(10.0)[:, None]
    with pytest.raises(DataError, match="deterministic exposure model"):
        gps_normal_weights(Dataset(x, 2 * x[:, 0] + 1))
