"""k-contact probabilities for noiseless and noisy Poisson processes.

``berman_cdf`` is the exact noiseless probability that at least ``k`` events
fall in a ball, ``P(Pois(M) >= k)`` with ``M`` the intensity mass of the
ball.  ``contact_bound`` and ``contact_bound_iid`` bound the same
probability for the noisy process by inflating the radius with the largest
of ``k`` displacement norms.  ``simulate_pc`` estimates the probability of
coincidence of an observed cluster by resampling hyperparameters and true
member positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import InvalidInputError
from .geometry import Domain, Sphere, min_bounding_sphere
from .intensity import IntensityModel, MCEstimate, ModelFamily, ball_mass_profile, unit_ball_samples
from .noise import NoiseModel, metric_norm, perturb, radial_max_pdf, radial_max_ppf

TINY_PROBABILITY = 1e-16


def poisson_tail(k: int, mass):
    """``P(N >= k)`` for ``N ~ Poisson(mass)``.

    Uses the regularized lower incomplete gamma function, which equals
    ``1 - sum_{i<k} mass^i e^-mass / i!`` without the cancellation of the
    explicit sum (values far below 1e-16 keep full relative precision).
    """
    mass = np.asarray(mass, dtype=float)
    if k < 1:
        return np.ones_like(mass)
    out = special.gammainc(k, np.maximum(mass, 0.0))
    return np.clip(out, 0.0, 1.0)


def poisson_pmf(i: int, mass):
    """Poisson probability of exactly ``i`` events, evaluated in log space."""
    mass = np.asarray(mass, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = special.xlogy(i, mass) - mass - special.gammaln(i + 1)
    return np.where(mass > 0, np.exp(logp), 1.0 if i == 0 else 0.0)


@dataclass(frozen=True)
class ContactQuery:
    center: np.ndarray
    radius: float
    k: int
    cluster: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius >= 0:
            raise InvalidInputError(f"radius must be >= 0, got {self.radius}")
        if int(self.k) < 1:
            raise InvalidInputError(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "k", int(self.k))

    @classmethod
    def from_cluster(cls, points, domain: Domain) -> "ContactQuery":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        sphere = min_bounding_sphere(pts, domain)
        return cls(sphere.center, sphere.radius, pts.shape[0], pts)

    @property
    def sphere(self) -> Sphere:
        return Sphere(self.center, self.radius)


def _tail_estimate(k, masses, mass_errors):
    """Mean Poisson tail with a delta-method error from the ball masses."""
    tails = poisson_tail(k, masses)
    slope = poisson_pmf(k - 1, masses)
    # inner samples are shared across radii, so their errors add linearly
    inner = float(np.mean(slope * mass_errors))
    return tails, inner


def berman_cdf(model: IntensityModel, q: ContactQuery, n_mc: int = 4096, seed=None) -> MCEstimate:
    """Probability that at least ``k`` events of the noiseless process lie in the ball."""
    if q.radius == 0.0:
        return MCEstimate(0.0, 0.0)
    mass = model.integrate_ball(q.sphere, n_mc, seed)
    p = float(poisson_tail(q.k, mass.value))
    se = float(poisson_pmf(q.k - 1, mass.value)) * mass.stderr
    return MCEstimate(p, se)


def contact_bound(
    model: IntensityModel,
    noises,
    q: ContactQuery,
    n_outer: int = 2000,
    n_inner: int = 2048,
    seed=None,
) -> MCEstimate:
    """Upper bound on the noisy k-contact probability for arbitrary noise laws.

    Outer Monte Carlo over joint draws of the ``k`` displacements; each draw
    inflates the radius by the largest metric norm and contributes the
    noiseless tail at that radius.
    """
    if isinstance(noises, NoiseModel):
        noises = [noises] * q.k
    if len(noises) != q.k:
        raise InvalidInputError(f"need {q.k} noise models, got {len(noises)}")
    rng = np.random.default_rng(seed)
    weights = model.domain.weights
    largest = np.zeros(n_outer)
    for noise in noises:
        largest = np.maximum(largest, metric_norm(noise.sample(rng, n_outer), weights))
    radii = q.radius + largest
    unit = unit_ball_samples(n_inner, model.domain.dim, rng)
    masses, errors = ball_mass_profile(model, q.center, radii, unit)
    tails, inner = _tail_estimate(q.k, masses, errors)
    value = float(np.mean(tails))
    outer = float(np.std(tails, ddof=1) / np.sqrt(n_outer)) if n_outer > 1 else 0.0
    return MCEstimate(min(max(value, 0.0), 1.0), float(np.hypot(outer, inner)))


def contact_bound_iid(
    model: IntensityModel,
    noise: NoiseModel,
    q: ContactQuery,
    n_grid: int = 64,
    n_inner: int = 2048,
    seed=None,
) -> MCEstimate:
    """Bound for i.i.d. displacements as a 1-d integral over the largest norm.

    Gauss-Legendre quadrature on ``[0, x_max]`` where the law of the largest
    of ``k`` norms has CDF ``1 - 1e-10`` at ``x_max``.
    """
    weights = model.domain.weights
    if noise.is_degenerate:
        return berman_cdf(model, q, n_inner, seed)
    x_max = float(radial_max_ppf(noise, q.k, 1.0 - 1e-10, weights))
    nodes, w = np.polynomial.legendre.leggauss(n_grid)
    x = 0.5 * x_max * (nodes + 1.0)
    w = 0.5 * x_max * w * radial_max_pdf(noise, q.k, x, weights)
    rng = np.random.default_rng(seed)
    unit = unit_ball_samples(n_inner, model.domain.dim, rng)
    masses, errors = ball_mass_profile(model, q.center, q.radius + x, unit)
    tails = poisson_tail(q.k, masses)
    value = float(np.dot(w, tails))
    se = float(np.dot(w, poisson_pmf(q.k - 1, masses) * errors))
    return MCEstimate(min(max(value, 0.0), 1.0), se)


# -- probability of coincidence -------------------------------------------------

@dataclass
class ContactResult:
    identifier: str
    k: int
    center: np.ndarray
    radius: float
    weights: np.ndarray
    median: float = np.nan
    ci_low: float = np.nan
    ci_high: float = np.nan
    bound: MCEstimate = None
    replicates: np.ndarray = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict)

    def to_row(self) -> dict:
        row = {
            "id": self.identifier,
            "k": self.k,
            "center": [float(c) for c in self.center],
            "radius": float(self.radius),
            "weights": [float(w) for w in self.weights],
            "pc_median": format_probability(self.median),
            "pc_ci_low": format_probability(self.ci_low),
            "pc_ci_high": format_probability(self.ci_high),
        }
        if self.bound is not None:
            row["bound"] = format_probability(self.bound.value)
            row["bound_stderr"] = float(self.bound.stderr)
        return row


def format_probability(p):
    """Probabilities below double-precision resolution of 1 are reported as a bound."""
    if p is None or not np.isfinite(p):
        return None
    if p < TINY_PROBABILITY:
        return f"<{TINY_PROBABILITY:g}"
    return float(p)


def _posterior_draws(posterior) -> np.ndarray:
    draws = getattr(posterior, "draws", posterior)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if draws.size == 0:
        raise InvalidInputError("empty posterior")
    return draws


def simulate_pc(
    posterior,
    family: ModelFamily,
    cluster,
    noises,
    count_scaling: float = 1.0,
    n_rep: int = 5000,
    n_mc: int = 2048,
    seed=None,
    identifier: str = "",
) -> ContactResult:
    """Direct simulation of the probability of coincidence for a cluster.

    Each replicate draws hyperparameters from the posterior (with the
    expected count multiplied by ``count_scaling``), draws true member
    positions from the localization laws, and evaluates the noiseless
    k-contact probability at the minimal bounding sphere of those positions.
    The same unit-ball samples are reused in every replicate so the spread
    of the replicates reflects posterior and localization uncertainty, not
    integration noise.
    """
    draws = _posterior_draws(posterior)
    cluster = np.atleast_2d(np.asarray(cluster, dtype=float))
    k = cluster.shape[0]
    if k < 2:
        raise InvalidInputError("a coincidence needs at least two events")
    if not count_scaling > 0:
        raise InvalidInputError("count scaling must be positive")
    if isinstance(noises, NoiseModel):
        noises = [noises] * k
    if len(noises) != k:
        raise InvalidInputError("need one noise model per cluster member")
    domain = family.domain
    rng = np.random.default_rng(seed)
    unit = unit_ball_samples(n_mc, domain.dim, rng)
    observed = min_bounding_sphere(cluster, domain)
    models: dict = {}
    values = np.empty(n_rep)
    radii = np.empty(n_rep)
    noiseless = all(n.is_degenerate for n in noises)
    for j in range(n_rep):
        idx = int(rng.integers(draws.shape[0]))
        if idx not in models:
            models[idx] = family.build(family.scale_counts(draws[idx], count_scaling))
        model = models[idx]
        if noiseless:
            sphere = observed
        else:
            true = perturb(cluster, noises, domain, rng, sign=-1)
            sphere = min_bounding_sphere(true, domain)
        mass, _ = ball_mass_profile(model, sphere.center, [sphere.radius], unit)
        values[j] = poisson_tail(k, mass[0])
        radii[j] = sphere.radius
    lo, med, hi = np.quantile(values, [0.025, 0.5, 0.975])
    return ContactResult(
        identifier=identifier,
        k=k,
        center=observed.center,
        radius=observed.radius,
        weights=domain.weights.copy(),
        median=float(med),
        ci_low=float(lo),
        ci_high=float(hi),
        replicates=values,
        metadata={
            "n_rep": n_rep,
            "n_mc": n_mc,
            "count_scaling": count_scaling,
            "n_posterior_draws": int(draws.shape[0]),
            "replicate_radius_median": float(np.median(radii)),
        },
    )


def posterior_bound(
    posterior,
    family: ModelFamily,
    noises,
    q: ContactQuery,
    count_scaling: float = 1.0,
    n_outer: int = 2000,
    n_inner: int = 2048,
    seed=None,
) -> MCEstimate:
    """``contact_bound`` with hyperparameters redrawn from the posterior per outer draw."""
    draws = _posterior_draws(posterior)
    if isinstance(noises, NoiseModel):
        noises = [noises] * q.k
    if len(noises) != q.k:
        raise InvalidInputError(f"need {q.k} noise models, got {len(noises)}")
    rng = np.random.default_rng(seed)
    domain = family.domain
    largest = np.zeros(n_outer)
    for noise in noises:
        largest = np.maximum(largest, metric_norm(noise.sample(rng, n_outer), domain.weights))
    radii = q.radius + largest
    unit = unit_ball_samples(n_inner, domain.dim, rng)
    picks = rng.integers(draws.shape[0], size=n_outer)
    tails = np.empty(n_outer)
    slopes_err = np.empty(n_outer)
    for idx in np.unique(picks):
        sel = np.flatnonzero(picks == idx)
        model = family.build(family.scale_counts(draws[idx], count_scaling))
        masses, errors = ball_mass_profile(model, q.center, radii[sel], unit)
        tails[sel] = poisson_tail(q.k, masses)
        slopes_err[sel] = poisson_pmf(q.k - 1, masses) * errors
    value = float(np.mean(tails))
    outer = float(np.std(tails, ddof=1) / np.sqrt(n_outer)) if n_outer > 1 else 0.0
    return MCEstimate(min(max(value, 0.0), 1.0), float(np.hypot(outer, np.mean(slopes_err))))


# -- comparison with externally supplied values -----------------------------------

@dataclass
class ComparisonTable:
    rows: list
    unmatched: list
    median_ratio: float
    n_improved: int
    n_compared: int

    def summary(self) -> dict:
        return {
            "median_ratio": self.median_ratio,
            "n_improved": self.n_improved,
            "n_compared": self.n_compared,
            "unmatched": list(self.unmatched),
        }


def compare_with_previous(results, previous: dict) -> ComparisonTable:
    """Join P_C results with previous values; ratio is previous / new."""
    rows = []
    ratios = []
    seen = set()
    unmatched = []
    for res in results:
        seen.add(res.identifier)
        if res.identifier not in previous:
            unmatched.append(res.identifier)
            continue
        prev = float(previous[res.identifier])
        new = float(res.median)
        if new > 0:
            ratio = prev / new
        else:
            ratio = np.inf if prev > 0 else np.nan
        ratios.append(ratio)
        rows.append({
            "id": res.identifier,
            "pc": new,
            "bound": None if res.bound is None else float(res.bound.value),
            "previous": prev,
            "ratio": ratio,
        })
    unmatched.extend(sorted(set(previous) - seen))
    ratios = np.array(ratios, dtype=float)
    finite = ratios[~np.isnan(ratios)]
    return ComparisonTable(
        rows=rows,
        unmatched=unmatched,
        median_ratio=float(np.median(finite)) if finite.size else np.nan,
        n_improved=int(np.sum(finite > 1)),
        n_compared=len(rows),
    )


__all__ = [
    "ContactQuery", "ContactResult", "ComparisonTable", "berman_cdf", "contact_bound",
    "contact_bound_iid", "simulate_pc", "posterior_bound", "compare_with_previous",
    "poisson_tail", "poisson_pmf", "format_probability",
]
