import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import gammaln

from kcontact.catalog import EventCatalog
from kcontact.diagnostics import effective_sample_size
from kcontact.errors import ConfigError, DataError, InvalidInputError
from kcontact.geometry import frb_domain, unit_square
from kcontact.intensity import FrbIntensity, frb_family, homogeneous_family
from kcontact.mcmc import (
    FRB_THETA_STAR,
    ChainConfig,
    CoverageConfig,
    PosteriorChain,
    coverage_study,
    diagnose_chains,
    frb_hyperprior,
    homogeneous_hyperprior,
    lhs_starts,
    log_likelihood,
    positive_normal,
    read_chain,
    run_chain,
    run_chains,
    simulate_catalog,
)
from kcontact.noise import DegenerateNoise, GaussianNoise


def _homogeneous_catalog(points, sigma=0.05):
    points = np.atleast_2d(points)
    noise = DegenerateNoise(2) if sigma == 0 else GaussianNoise(sigma, 2)
    return EventCatalog([f"e{i}" for i in range(len(points))], points, [noise] * len(points), unit_square())


# -- priors --------------------------------------------------------------------------

def test_prior_logpdf_matches_scipy():
    prior = frb_hyperprior()
    theta = np.array([700.0, 1.3, 4.0, 2.5, 300.0, 900.0])
    ref = sum(m.dist.logpdf(x) for m, x in zip(prior.marginals, theta))
    assert prior.logpdf(theta) == pytest.approx(ref, rel=1e-12)
    assert prior.logpdf(theta * [1, -1, 1, 1, 1, 1]) == -np.inf
    assert prior.logpdf(np.array([5000.0, 1.3, 4.0, 2.5, 300.0, 900.0])) == -np.inf


def test_truncation_flags():
    flags = frb_hyperprior().truncation_flags
    assert flags == {"n_frbs": False, "b": True, "c": False, "d": False, "dm0": True, "dm_star": True}
    assert not any(frb_hyperprior(truncate=False).truncation_flags.values())


def test_truncated_normal_normalized():
    m = positive_normal("x", 560.0, 560.0)
    xs = np.linspace(0, 8000, 400_001)
    dens = np.exp([m.logpdf(x) for x in xs])
    assert np.trapezoid(dens, xs) == pytest.approx(1.0, abs=1e-5)


def test_initial_covariance_scale():
    prior = homogeneous_hyperprior(1.0, 1001.0)
    assert prior.initial_covariance()[0, 0] == pytest.approx((0.01 * 900.0) ** 2)


@given(st.integers(1, 30), st.integers(0, 2**31))
@settings(max_examples=40)
def test_lhs_one_draw_per_stratum(n, seed):
    prior = frb_hyperprior()
    starts = lhs_starts(prior, n, seed)
    assert starts.shape == (n, 6)
    strata = np.floor(prior.cdf(starts) * n + 1e-9).astype(int)
    for j in range(6):
        assert sorted(np.minimum(strata[:, j], n - 1)) == list(range(n))


def test_lhs_valid_redraw_keeps_strata():
    prior = homogeneous_hyperprior(0.0, 10.0)
    starts = lhs_starts(prior, 10, 3, valid=lambda t: t[0] % 1.0 < 0.5)
    assert np.all(starts[:, 0] % 1.0 < 0.5)
    assert sorted(np.floor(starts[:, 0]).astype(int)) == list(range(10))
    with pytest.raises(InvalidInputError):
        lhs_starts(prior, 0)


# -- likelihood ----------------------------------------------------------------------

def test_likelihood_empty_catalog():
    fam = homogeneous_family()
    assert log_likelihood([40.0], np.empty((0, 2)), fam) == pytest.approx(-40.0)


def test_likelihood_homogeneous_closed_form():
    fam = homogeneous_family()
    pts = np.array([[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])
    expected = -25.0 + 3 * np.log(25.0) - np.log(6.0)
    assert log_likelihood([25.0], pts, fam) == pytest.approx(expected, rel=1e-12)


def test_likelihood_frb_independent_evaluation():
    dom = frb_domain()
    theta = np.array(FRB_THETA_STAR)
    model = FrbIntensity(theta)
    rng = np.random.default_rng(0)
    latent = np.column_stack([rng.uniform(10, 350, 5), rng.uniform(0, 60, 5), rng.uniform(200, 1500, 5)])
    disp = rng.normal(scale=[0.2, 0.2, 1.0], size=(5, 3))
    observed = latent + disp
    sig = rng.uniform(0.5, 2.0, 5)
    cat = EventCatalog([f"f{i}" for i in range(5)], observed, [GaussianNoise(0.2, 2)] * 5, dom, dm_sigma=sig,
                       position_dims=(0, 1), dm_dim=2)
    ref = -model.total_mass - gammaln(6) + np.sum(np.log(model.eval(latent)))
    ref += np.sum(stats.norm.logpdf(disp[:, :2], scale=0.2)) + np.sum(stats.norm.logpdf(disp[:, 2], scale=sig))
    assert log_likelihood(theta, latent, frb_family(), cat) == pytest.approx(ref, rel=1e-12)
    perm = rng.permutation(5)
    assert log_likelihood(theta, latent[perm], frb_family(), cat.subset(perm)) == pytest.approx(ref, rel=1e-12)


def test_likelihood_zero_intensity_and_bad_theta():
    fam = frb_family()
    latent = np.array([[10.0, -30.0, 500.0]])
    assert log_likelihood(FRB_THETA_STAR, latent, fam) == -np.inf
    with pytest.raises(InvalidInputError):
        log_likelihood([np.nan], [[0.5, 0.5]], homogeneous_family())


# -- chains --------------------------------------------------------------------------

def test_chain_config_validation():
    with pytest.raises(ConfigError):
        ChainConfig(n_iter=100, burn_in=100)
    with pytest.raises(ConfigError):
        ChainConfig(thin=0)


def test_chain_deterministic_and_supported():
    cat = _homogeneous_catalog(np.random.default_rng(1).random((30, 2)))
    cfg = ChainConfig(n_iter=600, burn_in=100, adapt_at=200, seed=(5, 1))
    prior = homogeneous_hyperprior()
    a = run_chain(cat, prior, cfg, homogeneous_family())
    b = run_chain(cat, prior, cfg, homogeneous_family())
    assert np.array_equal(a.draws, b.draws) and np.array_equal(a.log_post, b.log_post)
    assert np.all((a.draws >= 1) & (a.draws <= 1000))
    a.final_state.check(cat.domain)
    assert a.n_draws == 500 and a.iterations[0] == 100


def test_covariance_frozen_after_adaptation():
    cat = _homogeneous_catalog(np.random.default_rng(2).random((20, 2)))
    chain = run_chain(cat, homogeneous_hyperprior(), ChainConfig(n_iter=800, burn_in=100, adapt_at=300, seed=3),
                      homogeneous_family())
    assert chain.frozen_cov is not None
    assert np.array_equal(chain.frozen_cov, chain.proposal_cov)


def test_empty_catalog_rejected():
    with pytest.raises(DataError):
        run_chain(_homogeneous_catalog(np.empty((0, 2))), homogeneous_hyperprior(), ChainConfig(n_iter=10, burn_in=0),
                  homogeneous_family())


def test_single_event_toy_posterior():
    # one event, unit-area window: posterior of the rate is proportional to
    # lam * exp(-lam) on [1, 1000], a Gamma(2, 1) truncated below at 1
    cat = _homogeneous_catalog([[0.5, 0.5]], sigma=0.05)
    chain = run_chain(cat, homogeneous_hyperprior(), ChainConfig(n_iter=40_000, burn_in=2000, adapt_at=2000, seed=7),
                      homogeneous_family())
    x = chain.draws[:, 0]
    ess, _ = effective_sample_size(x)
    mcse = np.sqrt(1.75 / ess)
    assert abs(x.mean() - 2.5) < 3 * mcse
    assert x.var() == pytest.approx(1.75, rel=0.15)


def test_chain_roundtrip(tmp_path):
    cat = _homogeneous_catalog(np.random.default_rng(3).random((10, 2)))
    chain = run_chain(cat, homogeneous_hyperprior(), ChainConfig(n_iter=200, burn_in=50, thin=3, seed=1),
                      homogeneous_family())
    for name in ("c.csv", "c.npz"):
        getattr(chain, "to_" + name[2:])(tmp_path / name)
        back = read_chain(tmp_path / name)
        assert np.array_equal(back.draws, chain.draws)
        assert np.array_equal(back.log_post, chain.log_post)
        assert np.array_equal(back.iterations, chain.iterations)
        assert back.seed == chain.seed and back.config_hash == chain.config_hash
    (tmp_path / "bad.csv").write_text("#kcontact-chain v9\n")
    with pytest.raises(DataError):
        PosteriorChain.from_csv(tmp_path / "bad.csv")


def test_run_chains_independent_of_workers():
    cat = _homogeneous_catalog(np.random.default_rng(4).random((15, 2)))
    cfg = ChainConfig(n_iter=300, burn_in=100, adapt_at=100, seed=9)
    a = run_chains(cat, homogeneous_hyperprior(), cfg, 2, homogeneous_family(), workers=1)
    b = run_chains(cat, homogeneous_hyperprior(), cfg, 2, homogeneous_family(), workers=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.draws, y.draws)
    assert a[0].seed == (9, 0) and a[1].seed == (9, 1)
    rep = diagnose_chains(a, min_ess=1)
    assert rep.metadata["n_chains"] == 2


def test_simulated_frb_catalog_shape():
    cat, ds = simulate_catalog(FrbIntensity(FRB_THETA_STAR), seed=3)
    assert len(cat) == ds.n > 300
    assert cat.dm_dim == 2 and np.all((cat.dm_sigma >= 0.4) & (cat.dm_sigma <= 3.0))


def test_coverage_single_replicate_shape():
    cfg = CoverageConfig(family="homogeneous", theta_star=(80.0,), n_replicates=1, n_chains=2,
                         n_iter=400, burn_in=100, adapt_at=100, seed=1, pos_sigma=0.01)
    table = coverage_study(cfg)
    assert table.intervals.shape == (1, 1, 2) and table.covered.shape == (1, 1)
    assert table.intervals[0, 0, 0] < table.intervals[0, 0, 1]


def test_homogeneous_noiseless_coverage():
    cfg = CoverageConfig(family="homogeneous", theta_star=(120.0,), n_replicates=10, n_chains=2,
                         n_iter=2000, burn_in=500, adapt_at=500, seed=2, pos_sigma=0.0)
    table = coverage_study(cfg)
    assert table.counts["rate"] >= 8
    with pytest.raises(ConfigError):
        coverage_study(CoverageConfig(family="homogeneous", theta_star=(5000.0,)))
