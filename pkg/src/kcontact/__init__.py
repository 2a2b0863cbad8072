"""k-contact coincidence probabilities for point catalogs with measurement noise."""

__version__ = "0.1.0"

from .contact import (
    ContactQuery,
    ContactResult,
    berman_cdf,
    compare_with_previous,
    contact_bound,
    contact_bound_iid,
    posterior_bound,
    simulate_pc,
)
from .diagnostics import diagnose, effective_sample_size, gelman_rubin
from .geometry import Domain, Sphere, frb_domain, metric_distance, min_bounding_sphere, unit_square
from .intensity import (
    FrbIntensity,
    GaussianIntensity,
    GaussianMixtureIntensity,
    HomogeneousIntensity,
    benchmark_gaussian,
    benchmark_mixture,
    make_intensity,
)
from .noise import DegenerateNoise, GaussianNoise, GriddedNoise, ProductNoise, perturb
