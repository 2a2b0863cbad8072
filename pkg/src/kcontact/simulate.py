"""Synthetic noisy Poisson datasets and the bound-validation experiment."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .catalog import atomic_write_text
from .contact import ContactQuery, contact_bound, contact_bound_iid
from .errors import ConfigError, EnvelopeTooSmallError
from .geometry import Domain
from .intensity import IntensityModel, benchmark_gaussian, benchmark_mixture
from .noise import DegenerateNoise, GaussianNoise, NoiseModel, perturb

ENVELOPE_INFLATION = 1.1


def derived_seed(master, *index) -> np.random.SeedSequence:
    """Seed for task ``index`` of a run, independent of scheduling order."""
    return np.random.SeedSequence([int(master), *[int(i) for i in index]])


def sample_count(model: IntensityModel, seed=None) -> int:
    rng = np.random.default_rng(seed)
    return int(rng.poisson(model.total_mass))


def rejection_envelope(model: IntensityModel, n_grid: int = 256, inflation: float = ENVELOPE_INFLATION) -> float:
    cache = model.__dict__.setdefault("_envelope_cache", {})
    key = (n_grid, inflation)
    if key not in cache:
        cache[key] = inflation * model.supremum_estimate(n_grid)
    return cache[key]


def _rejection_sample(model: IntensityModel, n: int, rng, envelope: float) -> np.ndarray:
    dom = model.domain
    out = np.empty((n, dom.dim))
    filled = 0
    accept_rate = max(model.total_mass / (envelope * dom.volume), 1e-4)
    while filled < n:
        m = int(1.2 * (n - filled) / accept_rate) + 16
        prop = dom.lower + rng.random((m, dom.dim)) * dom.extent
        lam = model.eval(prop)
        if np.any(lam > envelope):
            raise EnvelopeTooSmallError(f"intensity {lam.max():.6g} exceeds envelope {envelope:.6g}")
        keep = prop[rng.random(m) * envelope < lam]
        take = min(keep.shape[0], n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def sample_positions(model: IntensityModel, n: int, seed=None) -> np.ndarray:
    """``n`` i.i.d. draws from the normalized intensity by rejection sampling."""
    rng = np.random.default_rng(seed)
    if n == 0:
        return np.empty((0, model.domain.dim))
    n_grid, inflation = 256, ENVELOPE_INFLATION
    for _ in range(4):
        try:
            return _rejection_sample(model, n, rng, rejection_envelope(model, n_grid, inflation))
        except EnvelopeTooSmallError:
            n_grid, inflation = 2 * n_grid, 2 * inflation
    raise EnvelopeTooSmallError("could not find a valid rejection envelope")


@dataclass
class SyntheticDataset:
    true_positions: np.ndarray
    noisy_positions: np.ndarray
    noises: list
    params: dict
    seed: object
    domain: Domain = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.true_positions.shape[0]


def make_dataset(model: IntensityModel, noise, seed=None, max_retries: int = 1000) -> SyntheticDataset:
    """Draw a count, true positions, and noisy positions.

    ``noise`` is a single model shared by every event, or a callable
    ``noise(rng, n)`` returning one model per event.
    """
    rng = np.random.default_rng(seed)
    n = sample_count(model, rng)
    true = sample_positions(model, n, rng)
    if isinstance(noise, NoiseModel):
        noises = [noise] * n
        noisy = perturb(true, noise, model.domain, rng, max_retries) if n else true.copy()
    else:
        noises = list(noise(rng, n))
        noisy = perturb(true, noises, model.domain, rng, max_retries) if n else true.copy()
    return SyntheticDataset(true, noisy, noises, model.params(), seed, model.domain)


# -- bound validation -------------------------------------------------------------

SIGMA_GRID = (1e-3, 1e-2, 1e-1)


@dataclass
class BoundValidationConfig:
    intensity: str = "gaussian"
    sigma: float = 1e-3
    radius: float = 1e-2
    k: int = 2
    n_test: int = 500
    n_rep: int = 5000
    seed: int = 0
    test_points: str = "uniform"
    bound_method: str = "iid"
    n_grid: int = 48
    n_inner: int = 2048
    n_outer: int = 2000
    block_size: int = 250

    def __post_init__(self):
        if self.intensity not in ("gaussian", "mixture"):
            raise ConfigError(f"intensity must be 'gaussian' or 'mixture', got {self.intensity!r}")
        if self.test_points not in ("uniform", "intensity"):
            raise ConfigError("test_points must be 'uniform' or 'intensity'")
        if self.bound_method not in ("iid", "general"):
            raise ConfigError("bound_method must be 'iid' or 'general'")
        if not self.sigma >= 0 or not self.radius > 0 or self.k < 1:
            raise ConfigError("need sigma >= 0, radius > 0 and k >= 1")
        if self.n_rep < 1 or self.n_test < 1 or self.block_size < 1:
            raise ConfigError("counts must be positive")

    def model(self) -> IntensityModel:
        return benchmark_gaussian() if self.intensity == "gaussian" else benchmark_mixture()

    def noise(self) -> NoiseModel:
        return DegenerateNoise(2) if self.sigma == 0 else GaussianNoise(self.sigma, 2)


@dataclass
class BoundTable:
    config: BoundValidationConfig
    test_points: np.ndarray
    intensity: np.ndarray
    frequency: np.ndarray
    bound: np.ndarray
    bound_stderr: np.ndarray

    @property
    def binomial_stderr(self) -> np.ndarray:
        p = self.frequency
        return np.sqrt(p * (1 - p) / self.config.n_rep)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.frequency > 0, self.bound / self.frequency, np.nan)

    def dominance_violations(self, n_se: float = 3.0) -> np.ndarray:
        """Indices where the bound falls below the frequency by more than ``n_se`` errors."""
        slack = n_se * np.hypot(self.binomial_stderr, self.bound_stderr)
        return np.flatnonzero(self.bound < self.frequency - slack)

    def ratio_range(self, min_frequency: float) -> tuple:
        sel = self.frequency >= min_frequency
        r = self.ratio[sel]
        return (float(np.min(r)), float(np.max(r))) if r.size else (np.nan, np.nan)

    def rows(self):
        names = [f"s0_{i}" for i in range(self.test_points.shape[1])]
        for i in range(self.test_points.shape[0]):
            row = dict(zip(names, self.test_points[i].tolist()))
            row.update(
                intensity=float(self.intensity[i]),
                frequency=float(self.frequency[i]),
                bound=float(self.bound[i]),
                bound_stderr=float(self.bound_stderr[i]),
                ratio=float(self.ratio[i]),
            )
            yield row

    def to_csv(self, path) -> None:
        rows = list(self.rows())
        buf = io.StringIO()
        buf.write("#kcontact-bound-table v1\n")
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        atomic_write_text(path, buf.getvalue())

    def summary(self, min_frequency: float = None) -> dict:
        if min_frequency is None:
            min_frequency = 10.0 / self.config.n_rep
        lo, hi = self.ratio_range(min_frequency)
        r = self.ratio[self.frequency >= min_frequency]
        return {
            "config": asdict(self.config),
            "n_test": int(self.test_points.shape[0]),
            "dominance_violations": int(self.dominance_violations().size),
            "ratio_min": lo,
            "ratio_max": hi,
            "ratio_quantiles": (np.quantile(r, [0.05, 0.5, 0.95]).tolist() if r.size else []),
            "min_frequency_for_ratio": min_frequency,
        }


def draw_test_points(config: BoundValidationConfig, model: IntensityModel) -> np.ndarray:
    rng = np.random.default_rng(derived_seed(config.seed, 1 << 30))
    if config.test_points == "intensity":
        return sample_positions(model, config.n_test, rng)
    dom = model.domain
    return dom.lower + rng.random((config.n_test, dom.dim)) * dom.extent


def contact_frequencies(model, noise, centers, radius, k, n_rep, seed, block_size=250, start_block=0):
    """Number of replicate datasets with at least ``k`` noisy events within ``radius`` of each center.

    Replicates are generated in blocks; block ``b`` is seeded from
    ``(seed, b)`` so the counts depend only on the arguments.
    """
    dom = model.domain
    centers = np.atleast_2d(centers) * dom.weights
    hits = np.zeros(centers.shape[0], dtype=np.int64)
    n_blocks = -(-n_rep // block_size)
    for b in range(start_block, start_block + n_blocks):
        size = min(block_size, n_rep - (b - start_block) * block_size)
        rng = np.random.default_rng(derived_seed(seed, b))
        counts = rng.poisson(model.total_mass, size=size)
        total = int(counts.sum())
        true = sample_positions(model, total, rng)
        if noise.is_degenerate or total == 0:
            noisy = true
        else:
            noisy = perturb(true, noise, dom, rng)
        owner = np.repeat(np.arange(size), counts)
        tree = cKDTree(noisy * dom.weights)
        for i, idx in enumerate(tree.query_ball_point(centers, radius)):
            if len(idx) >= k:
                per_rep = np.bincount(owner[idx], minlength=size)
                hits[i] += int(np.sum(per_rep >= k))
    return hits


def bound_validation_experiment(config: BoundValidationConfig, progress=None) -> BoundTable:
    """Empirical k-contact frequency versus the bound at random test points."""
    model = config.model()
    noise = config.noise()
    centers = draw_test_points(config, model)
    hits = contact_frequencies(
        model, noise, centers, config.radius, config.k, config.n_rep,
        seed=config.seed, block_size=config.block_size,
    )
    bound = np.empty(config.n_test)
    bound_se = np.empty(config.n_test)
    for i, s0 in enumerate(centers):
        q = ContactQuery(s0, config.radius, config.k)
        seed = derived_seed(config.seed, 1 << 29, i)
        if config.bound_method == "iid":
            est = contact_bound_iid(model, noise, q, config.n_grid, config.n_inner, seed)
        else:
            est = contact_bound(model, noise, q, config.n_outer, config.n_inner, seed)
        bound[i], bound_se[i] = est
        if progress is not None:
            progress(i)
    return BoundTable(
        config=config,
        test_points=centers,
        intensity=np.asarray(model.eval(centers)),
        frequency=hits / config.n_rep,
        bound=bound,
        bound_stderr=bound_se,
    )
