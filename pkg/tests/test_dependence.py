import json

import numpy as np
import oracles
import pytest
from conftest import random_dataset
from hypothesis import given, settings
from hypothesis import strategies as st

from indweights import (
    Dataset,
    WeightVector,
    criterion,
    dimension_coefficients,
    pairwise_distances,
    weighted_dcov,
    weighted_energy_distance,
)


def test_dcov_two_points():
    ds = pairwise_distances(Dataset([[0.0], [1.0]], [0.0, 2.0]))
    assert weighted_dcov(ds, [1.0, 1.0]) == pytest.approx(0.5, abs=1e-15)


def test_dcov_identical_covariates_is_zero(rng):
    ds = pairwise_distances(Dataset(np.ones((6, 2)), rng.standard_normal(6)))
    w = WeightVector.normalized(rng.exponential(size=6))
    assert weighted_dcov(ds, w) == 0.0


def test_energy_examples():
    d = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert weighted_energy_distance(d, [1.0, 1.0]) == 0.0
    assert weighted_energy_distance(d, [2.0, 0.0]) == pytest.approx(0.5, abs=1e-15)
    d = np.random.default_rng(1).random((5, 5))
    d = d + d.T
    np.fill_diagonal(d, 0)
    assert weighted_energy_distance(d, np.ones(5)) == pytest.approx(0.0, abs=1e-15)


def test_dimension_coefficients():
    assert dimension_coefficients(1) == (0.5, 0.5)
    cx, ca = dimension_coefficients(4)
    assert cx == pytest.approx(2 / 3) and ca == pytest.approx(1 / 3)
    assert dimension_coefficients(7, False) == (1.0, 1.0)


def test_uniform_total_is_dcov(small_data):
    ds = pairwise_distances(small_data)
    crit = criterion(ds, np.ones(small_data.n))
    assert crit.energy_x == pytest.approx(0, abs=1e-13)
    assert crit.total == pytest.approx(crit.weighted_dcov, abs=1e-13)


def test_dcov_matches_unweighted_sample_dcov(rng):
    # unweighted V^2 equals the classical mean of A_kl B_kl
    for _ in range(5):
        d = random_dataset(rng, int(rng.integers(3, 20)), 2)
        ds = pairwise_distances(d)
        ref = float(np.mean(ds.centered_x * ds.centered_a))
        assert weighted_dcov(ds, np.ones(d.n)) == pytest.approx(ref, abs=1e-10)


def test_matches_definitional_loops(rng):
    for _ in range(10):
        n = int(rng.integers(2, 9))
        d = random_dataset(rng, n, int(rng.integers(1, 4)), outcome=False)
        w = WeightVector.normalized(rng.exponential(size=n)).values
        ds = pairwise_distances(d)
        x = d.covariates.tolist()
        a = d.exposure.tolist()
        assert weighted_dcov(ds, w) == pytest.approx(oracles.dcov(x, a, w), abs=1e-10)
        assert weighted_energy_distance(ds.dist_x, w) == pytest.approx(oracles.energy(x, w), abs=1e-10)
        assert criterion(ds, w).total == pytest.approx(oracles.criterion_total(x, a, w), abs=1e-10)


def test_criterion_total_composition(small_data, rng):
    ds = pairwise_distances(small_data)
    w = WeightVector.normalized(rng.exponential(size=small_data.n))
    for adjust in (True, False):
        c = criterion(ds, w, adjust)
        assert c.total == pytest.approx(c.weighted_dcov + c.c_x * c.energy_x + c.c_a * c.energy_a, rel=1e-14)
        assert c.dim_adjusted is adjust
    assert criterion(ds, w, False).c_x == 1.0


def test_permutation_equivariance(small_data, rng):
    w = WeightVector.normalized(rng.exponential(size=small_data.n)).values
    perm = rng.permutation(small_data.n)
    c1 = criterion(pairwise_distances(small_data), w)
    c2 = criterion(pairwise_distances(small_data.subset(perm)), w[perm])
    for field in ("weighted_dcov", "energy_x", "energy_a", "total"):
        assert getattr(c2, field) == pytest.approx(getattr(c1, field), rel=1e-12)


def test_exposure_scaling(small_data, rng):
    w = WeightVector.normalized(rng.exponential(size=small_data.n)).values
    s = 3.5
    scaled = Dataset(small_data.covariates, small_data.exposure * s)
    c1 = criterion(pairwise_distances(small_data), w)
    c2 = criterion(pairwise_distances(scaled), w)
    assert c2.energy_a == pytest.approx(s * c1.energy_a, rel=1e-10)
    assert c2.weighted_dcov == pytest.approx(s * c1.weighted_dcov, rel=1e-10)
    assert c2.energy_x == pytest.approx(c1.energy_x, rel=1e-12)


def test_json_keys_and_display_clamp():
    from indweights import CriterionValue

    c = CriterionValue(-1e-14, 0.2, -1e-12, 0.3, True, 0.5, 0.5)
    out = c.to_dict()
    assert set(out) == {"weighted_dcov", "energy_x", "energy_a", "total", "c_x", "c_a"}
    assert out["weighted_dcov"] == 0.0 and c.weighted_dcov < 0
    assert c.to_dict(clamp=False)["energy_a"] == -1e-12
    json.dumps(out)


def test_length_mismatch_raises(small_data):
    ds = pairwise_distances(small_data)
    with pytest.raises(ValueError):
        weighted_dcov(ds, np.ones(3))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_nonnegativity_property(n, p, seed):
    g = np.random.default_rng(seed)
    d = random_dataset(g, n, p, outcome=False)
    ds = pairwise_distances(d)
    raw = g.exponential(size=n) * (g.random(n) < 0.7)
    raw[0] += 0.1
    w = WeightVector.normalized(raw)
    c = criterion(ds, w)
    assert c.weighted_dcov >= -1e-10
    assert c.energy_x >= -1e-10 and c.energy_a >= -1e-10
    assert c.total >= -1e-10
