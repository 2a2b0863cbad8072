import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kcontact.contact import (
    ContactQuery,
    ContactResult,
    berman_cdf,
    compare_with_previous,
    contact_bound,
    contact_bound_iid,
    format_probability,
    poisson_pmf,
    poisson_tail,
    posterior_bound,
    simulate_pc,
)
from kcontact.errors import InvalidInputError
from kcontact.geometry import Domain, min_bounding_sphere, unit_square
from kcontact.intensity import HomogeneousIntensity, benchmark_gaussian, homogeneous_family
from kcontact.noise import DegenerateNoise, GaussianNoise, GriddedNoise
from kcontact.simulate import contact_frequencies
from oracles import poisson_tail_direct


@pytest.mark.parametrize("mass", [1e-8, 0.3, 2.5, 40.0, 1e3, 1e6])
@pytest.mark.parametrize("k", [1, 2, 5, 10])
def test_poisson_tail_high_precision(k, mass):
    mpmath.mp.dps = 50
    exact = mpmath.gammainc(k, 0, mass, regularized=True)
    assert abs(poisson_tail(k, mass) - float(exact)) <= 1e-12


def test_poisson_tail_matches_direct_sum():
    for k in (1, 3, 7):
        for m in (0.1, 1.0, 6.0):
            assert poisson_tail(k, m) == pytest.approx(poisson_tail_direct(k, m), rel=1e-12)


def test_poisson_tail_tiny_values_keep_relative_precision():
    mpmath.mp.dps = 50
    exact = float(mpmath.gammainc(3, 0, 1e-7, regularized=True))
    assert poisson_tail(3, 1e-7) == pytest.approx(exact, rel=1e-10)


def test_poisson_pmf_log_space():
    assert poisson_pmf(0, 0.0) == 1.0
    assert poisson_pmf(2, 0.0) == 0.0
    assert poisson_pmf(5, 1e6) == 0.0
    assert poisson_pmf(3, 2.0) == pytest.approx(8 / 6 * np.exp(-2))


def test_query_validation():
    with pytest.raises(InvalidInputError):
        ContactQuery([0.5, 0.5], -0.1, 2)
    with pytest.raises(InvalidInputError):
        ContactQuery([0.5, 0.5], 0.1, 0)


def test_query_from_cluster():
    q = ContactQuery.from_cluster([[0.2, 0.2], [0.4, 0.2]], unit_square())
    assert q.k == 2 and q.radius == pytest.approx(0.1)
    assert np.allclose(q.center, [0.3, 0.2])


def test_berman_zero_radius_and_homogeneous():
    m = HomogeneousIntensity(100.0)
    assert berman_cdf(m, ContactQuery([0.5, 0.5], 0.0, 1)).value == 0.0
    est = berman_cdf(m, ContactQuery([0.5, 0.5], 0.05, 1), seed=0)
    assert est.value == pytest.approx(1 - np.exp(-100 * np.pi * 0.0025), rel=1e-12)


def test_berman_gaussian_matches_noiseless_simulation():
    m = benchmark_gaussian()
    s0 = np.array([0.64, 0.61])
    est = berman_cdf(m, ContactQuery(s0, 1e-2, 2), n_mc=1 << 16, seed=1)
    n_rep = 100_000
    hits = contact_frequencies(m, DegenerateNoise(2), s0[None], 1e-2, 2, n_rep, seed=2, block_size=1000)
    freq = hits[0] / n_rep
    se = np.sqrt(est.value * (1 - est.value) / n_rep)
    assert abs(freq - est.value) < 3 * np.hypot(se, est.stderr)


def test_bounds_collapse_without_noise():
    m = benchmark_gaussian()
    q = ContactQuery([0.6, 0.6], 0.02, 3)
    b = berman_cdf(m, q, 4096, seed=5)
    assert contact_bound_iid(m, DegenerateNoise(2), q, n_inner=4096, seed=5).value == b.value
    gen = contact_bound(m, DegenerateNoise(2), q, n_outer=50, n_inner=4096, seed=5)
    assert abs(gen.value - b.value) < 3 * np.hypot(gen.stderr, b.stderr) + 1e-12


def test_general_bound_with_constant_displacement_norm():
    # all grid mass in a tiny cell at distance 0.01: |eps| is constant
    m = benchmark_gaussian()
    g = GriddedNoise([0.01, 0.0], [0.01 + 1e-12, 1e-12], np.ones((1, 1)))
    q = ContactQuery([0.6, 0.6], 0.02, 2)
    bound = contact_bound(m, g, q, n_outer=200, n_inner=8192, seed=3)
    ref = berman_cdf(m, ContactQuery([0.6, 0.6], 0.03, 2), 8192, seed=4)
    assert abs(bound.value - ref.value) < 3 * np.hypot(bound.stderr, ref.stderr)


def test_bound_monotone_in_k_and_r():
    m = benchmark_gaussian()
    noise = GaussianNoise(0.005, 2)
    vals = {}
    for k in (2, 3):
        for r in (0.01, 0.02, 0.04):
            vals[k, r] = contact_bound_iid(m, noise, ContactQuery([0.6, 0.6], r, k), seed=9).value
    for r in (0.01, 0.02, 0.04):
        assert vals[3, r] <= vals[2, r]
    for k in (2, 3):
        assert vals[k, 0.01] <= vals[k, 0.02] <= vals[k, 0.04]


@given(
    st.floats(0.2, 0.8), st.floats(0.2, 0.8), st.floats(0.002, 0.05),
    st.integers(1, 4), st.floats(1e-4, 0.02),
)
def test_berman_below_bound(x, y, r, k, sigma):
    m = benchmark_gaussian()
    q = ContactQuery([x, y], r, k)
    b = berman_cdf(m, q, 1024, seed=0)
    ub = contact_bound_iid(m, GaussianNoise(sigma, 2), q, n_grid=32, n_inner=1024, seed=0)
    assert 0.0 <= b.value <= 1.0 and 0.0 <= ub.value <= 1.0
    assert b.value <= ub.value + 3 * np.hypot(b.stderr, ub.stderr) + 1e-12


def test_simulate_pc_single_theta_noiseless_equals_berman():
    fam = homogeneous_family()
    cluster = np.array([[0.3, 0.3], [0.32, 0.31], [0.31, 0.33]])
    res = simulate_pc(np.array([[150.0]]), fam, cluster, DegenerateNoise(2), n_rep=50, n_mc=256, seed=1)
    q = ContactQuery.from_cluster(cluster, fam.domain)
    ref = berman_cdf(fam.build([150.0]), q, 256, seed=0)
    assert res.median == pytest.approx(ref.value, rel=1e-12)
    assert res.ci_low == res.ci_high == res.median
    assert np.all(res.replicates == res.median)


def test_simulate_pc_far_from_mass_is_tiny():
    model_dom = Domain([0, 0], [1, 1])
    fam = homogeneous_family(model_dom)
    cluster = np.array([[0.3, 0.3], [0.3000001, 0.3]])
    res = simulate_pc(np.array([[1e-3]]), fam, cluster, DegenerateNoise(2), n_rep=20, n_mc=128, seed=1)
    assert res.median < 1e-16
    assert format_probability(res.median) == "<1e-16"


def test_simulate_pc_count_scaling_increases_pc():
    fam = homogeneous_family()
    cluster = np.array([[0.3, 0.3], [0.35, 0.3]])
    noise = GaussianNoise(0.01, 2)
    lo = simulate_pc(np.array([[20.0]]), fam, cluster, noise, 1.0, n_rep=200, n_mc=256, seed=2)
    hi = simulate_pc(np.array([[20.0]]), fam, cluster, noise, 4.0, n_rep=200, n_mc=256, seed=2)
    assert hi.median > lo.median
    assert lo.ci_low <= lo.median <= lo.ci_high


def test_simulate_pc_rejects_singleton():
    with pytest.raises(InvalidInputError):
        simulate_pc(np.array([[1.0]]), homogeneous_family(), [[0.5, 0.5]], DegenerateNoise(2))


def test_posterior_bound_single_theta_matches_contact_bound():
    fam = homogeneous_family()
    q = ContactQuery([0.5, 0.5], 0.03, 2)
    noise = GaussianNoise(0.01, 2)
    a = posterior_bound(np.array([[80.0]]), fam, noise, q, n_outer=4000, n_inner=1024, seed=1)
    b = contact_bound_iid(fam.build([80.0]), noise, q, seed=2)
    assert abs(a.value - b.value) < 3 * np.hypot(a.stderr, b.stderr)


def _result(name, median):
    return ContactResult(name, 2, np.zeros(2), 0.1, np.ones(2), median=median)


def test_compare_identical_columns():
    res = [_result("a", 0.1), _result("b", 0.02)]
    table = compare_with_previous(res, {"a": 0.1, "b": 0.02})
    assert [r["ratio"] for r in table.rows] == [1.0, 1.0]
    assert table.median_ratio == 1.0 and table.n_improved == 0


def test_compare_known_ratios():
    res = [_result("a", 1e-6), _result("b", 1e-3), _result("c", 0.5), _result("d", 1.0)]
    table = compare_with_previous(res, {"a": 1e-3, "b": 1e-2, "c": 1.0, "e": 0.2})
    ratios = sorted(r["ratio"] for r in table.rows)
    assert ratios == pytest.approx([2.0, 10.0, 1000.0])
    assert table.median_ratio == pytest.approx(10.0)
    assert table.n_improved == 3 and table.n_compared == 3
    assert table.unmatched == ["d", "e"]


def test_format_probability():
    assert format_probability(1e-20) == "<1e-16"
    assert format_probability(0.25) == 0.25
    assert format_probability(float("nan")) is None
