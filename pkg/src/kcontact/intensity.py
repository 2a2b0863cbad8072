"""Parametric Poisson intensities on a bounded domain.

Every model exposes ``eval`` (vectorized over the last axis), ``log_eval``,
``total_mass`` (deterministic quadrature, cached) and ``normalized_density``.
Models are immutable once built; ``total_mass`` is computed lazily on first
use so that MCMC can build thousands of throwaway models cheaply.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import InvalidInputError, ModelConfigurationError, NumericalIntegrationError
from .geometry import Domain, Sphere, ball_volume, frb_domain, unit_square

TELESCOPE_LATITUDE = 49.32  # degrees


class MCEstimate(NamedTuple):
    value: float
    stderr: float


def tensor_quadrature(f, lower, upper, rtol=1e-6, n0=32, max_level=7):
    """Integrate ``f`` over a box by midpoint tensor grids of doubling resolution.

    ``f`` receives an array of shape ``(m, d)``.  Each level is Richardson
    extrapolated against the previous one (midpoint error is even in h); the
    loop stops once two successive extrapolated values agree to ``rtol``.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    d = lower.size
    plain = []
    extrap = []
    for level in range(max_level + 1):
        n = n0 * 2**level
        if n**d > 2**24:
            break
        axes = [lower[i] + (np.arange(n) + 0.5) * (upper[i] - lower[i]) / n for i in range(d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        cell = np.prod(upper - lower) / n**d
        plain.append(float(np.sum(f(grid)) * cell))
        if len(plain) >= 2:
            extrap.append((4.0 * plain[-1] - plain[-2]) / 3.0)
        if len(extrap) >= 2:
            a, b = extrap[-2], extrap[-1]
            if abs(b - a) <= rtol * abs(b) or (a == 0.0 and b == 0.0):
                return b
    raise NumericalIntegrationError(
        f"tensor quadrature did not reach rtol={rtol}; last estimates {extrap[-2:]}"
    )


def unit_ball_samples(n: int, d: int, rng) -> np.ndarray:
    """``n`` points uniform in the d-dimensional unit ball."""
    direction = rng.standard_normal((n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = rng.random(n) ** (1.0 / d)
    return direction * radius[:, None]


class IntensityModel:
    """Base class.  Subclasses implement ``_shape`` and set ``scale``."""

    kind = "abstract"
    # coordinates the intensity actually depends on; the rest are uniform
    varying_dims: tuple = None

    def __init__(self, domain: Domain):
        self.domain = domain
        if self.varying_dims is None:
            self.varying_dims = tuple(range(domain.dim))
        self.scale = 1.0

    def _shape(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _log_shape(self, points: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self._shape(points))

    def _as_points(self, s) -> np.ndarray:
        pts = np.asarray(s, dtype=float)
        if pts.shape[-1] != self.domain.dim:
            raise InvalidInputError(
                f"point dimension {pts.shape[-1]} does not match domain dimension {self.domain.dim}"
            )
        return self.domain.wrap(pts)

    def eval(self, s):
        """Intensity at ``s``; exactly zero outside the domain."""
        pts = self._as_points(s)
        inside = self.domain.contains(pts)
        out = np.zeros(pts.shape[:-1])
        if np.any(inside):
            out[inside] = self.scale * self._shape(pts[inside])
        return out if out.ndim else float(out)

    __call__ = eval

    def log_eval(self, s):
        pts = self._as_points(s)
        inside = self.domain.contains(pts)
        out = np.full(pts.shape[:-1], -np.inf)
        if np.any(inside):
            out[inside] = np.log(self.scale) + self._log_shape(pts[inside])
        return out if out.ndim else float(out)

    def _marginal_eval(self, sub: np.ndarray) -> np.ndarray:
        pts = np.tile(self.domain.lower, (sub.shape[0], 1))
        pts[:, list(self.varying_dims)] = sub
        return self.eval(pts)

    def _flat_extent(self) -> float:
        flat = [i for i in range(self.domain.dim) if i not in self.varying_dims]
        return float(np.prod(self.domain.extent[flat])) if flat else 1.0

    def quadrature_mass(self, rtol: float = 1e-6) -> float:
        """Integral of the intensity over the domain by tensor midpoint quadrature."""
        dims = list(self.varying_dims)
        if not dims:
            return float(self.eval(self.domain.lower)) * self.domain.volume
        mass = self._flat_extent() * tensor_quadrature(
            self._marginal_eval, self.domain.lower[dims], self.domain.upper[dims], rtol=rtol
        )
        if not (np.isfinite(mass) and mass > 0):
            raise ModelConfigurationError(f"total mass must be finite and positive, got {mass}")
        return mass

    @cached_property
    def total_mass(self) -> float:
        """Integral of the intensity over the domain (cached)."""
        return self.quadrature_mass()

    def normalized_density(self, s):
        return self.eval(s) / self.total_mass

    def supremum_estimate(self, n_grid: int = 256) -> float:
        """Grid maximum over the varying coordinates."""
        dims = list(self.varying_dims)
        lo, hi = self.domain.lower[dims], self.domain.upper[dims]
        axes = [np.linspace(lo[i], hi[i], n_grid) for i in range(len(dims))]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(dims))
        return float(np.max(self._marginal_eval(grid)))

    def integrate_ball(self, ball: Sphere, n_mc: int, seed=None) -> MCEstimate:
        """Monte Carlo estimate of the intensity mass inside a metric ball."""
        if n_mc < 1:
            raise InvalidInputError("n_mc must be >= 1")
        if ball.radius == 0.0:
            return MCEstimate(0.0, 0.0)
        rng = np.random.default_rng(seed)
        unit = unit_ball_samples(n_mc, self.domain.dim, rng)
        values, errors = ball_mass_profile(self, ball.center, np.array([ball.radius]), unit)
        return MCEstimate(float(values[0]), float(errors[0]))

    def params(self) -> dict:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params(), "domain": self.domain.to_dict()}

    def __repr__(self):
        return f"{type(self).__name__}({self.params()})"


def ball_mass_profile(model: IntensityModel, center, radii, unit: np.ndarray):
    """Ball masses at several radii sharing one set of unit-ball samples.

    Returns ``(values, stderrs)``.  Reusing the same samples keeps the
    estimates smooth in the radius, which the bound quadratures rely on.
    """
    radii = np.asarray(radii, dtype=float)
    center = np.asarray(center, dtype=float)
    offsets = unit / model.domain.weights
    n = unit.shape[0]
    values = np.zeros(radii.size)
    errors = np.zeros(radii.size)
    positive = np.flatnonzero(radii > 0)
    step = max(1, (1 << 20) // n)
    for start in range(0, positive.size, step):
        idx = positive[start:start + step]
        pts = center + radii[idx, None, None] * offsets[None, :, :]
        lam = model.eval(pts)
        vol = np.array([ball_volume(r, model.domain) for r in radii[idx]])
        values[idx] = vol * lam.mean(axis=1)
        if n > 1:
            errors[idx] = vol * lam.std(axis=1, ddof=1) / np.sqrt(n)
    return values, errors


class HomogeneousIntensity(IntensityModel):
    kind = "homogeneous"

    def __init__(self, rate: float, domain: Domain = None):
        super().__init__(domain or unit_square())
        if not (np.isfinite(rate) and rate > 0):
            raise ModelConfigurationError(f"rate must be positive, got {rate}")
        self.rate = float(rate)
        self.scale = self.rate
        self.varying_dims = ()

    def _shape(self, points):
        return np.ones(points.shape[:-1])

    @cached_property
    def total_mass(self) -> float:
        return self.rate * self.domain.volume

    def supremum_estimate(self, n_grid: int = 256) -> float:
        return self.rate

    def params(self):
        return {"rate": self.rate}


def _gauss_pdf(points, mean, cov):
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    prec = np.linalg.inv(cov)
    diff = points - mean
    q = np.einsum("...i,ij,...j->...", diff, prec, diff)
    norm = 1.0 / np.sqrt((2 * np.pi) ** mean.size * np.linalg.det(cov))
    return norm * np.exp(-0.5 * q)


class GaussianMixtureIntensity(IntensityModel):
    """Mixture of Gaussian bumps scaled to a fixed expected count on the domain."""

    kind = "gaussian-mixture"

    def __init__(self, weights, means, covs, total: float = 200.0, domain: Domain = None):
        super().__init__(domain or unit_square())
        self.weights = np.asarray(weights, dtype=float)
        self.means = np.asarray(means, dtype=float)
        self.covs = np.asarray(covs, dtype=float)
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ModelConfigurationError("mixture weights must be nonnegative and sum to 1")
        for cov in self.covs:
            if np.any(np.linalg.eigvalsh(cov) <= 0):
                raise ModelConfigurationError("component covariances must be positive definite")
        if not total > 0:
            raise ModelConfigurationError("total must be positive")
        self.total = float(total)
        self.shape_integral = tensor_quadrature(self._shape, self.domain.lower, self.domain.upper)
        self.scale = self.total / self.shape_integral

    def _shape(self, points):
        out = np.zeros(points.shape[:-1])
        for w, m, c in zip(self.weights, self.means, self.covs):
            if w > 0:
                out = out + w * _gauss_pdf(points, m, c)
        return out

    @cached_property
    def total_mass(self) -> float:
        # the normalizer was computed by the same quadrature at construction
        return self.scale * self.shape_integral

    def params(self):
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
            "total": self.total,
        }


class GaussianIntensity(GaussianMixtureIntensity):
    kind = "bivariate-gaussian"

    def __init__(self, mean, cov, total: float = 200.0, domain: Domain = None):
        super().__init__([1.0], [mean], [cov], total=total, domain=domain)

    def params(self):
        return {"mean": self.means[0].tolist(), "cov": self.covs[0].tolist(), "total": self.total}


BENCHMARK_MEAN_1 = (0.64, 0.61)
BENCHMARK_COV_1 = ((0.016, 0.007), (0.007, 0.02))
BENCHMARK_MEAN_2 = (0.25, 0.14)
BENCHMARK_COV_2 = ((0.007, 0.0005), (0.0005, 0.002))
BENCHMARK_MIXING_WEIGHT = 0.71


def benchmark_gaussian(total: float = 200.0) -> GaussianIntensity:
    """Single-bump benchmark intensity on the unit square."""
    return GaussianIntensity(BENCHMARK_MEAN_1, BENCHMARK_COV_1, total=total)


def benchmark_mixture(total: float = 200.0, q: float = BENCHMARK_MIXING_WEIGHT) -> GaussianMixtureIntensity:
    """Two-bump benchmark intensity on the unit square."""
    return GaussianMixtureIntensity(
        [q, 1.0 - q], [BENCHMARK_MEAN_1, BENCHMARK_MEAN_2], [BENCHMARK_COV_1, BENCHMARK_COV_2], total=total
    )


# -- FRB detection intensity ---------------------------------------------------

FRB_PARAM_NAMES = ("n_frbs", "b", "c", "d", "dm0", "dm_star")


@dataclass(frozen=True)
class FrbHyperparams:
    n_frbs: float
    b: float
    c: float
    d: float
    dm0: float
    dm_star: float
    latitude: float = TELESCOPE_LATITUDE

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in FRB_PARAM_NAMES])

    @classmethod
    def from_array(cls, theta, latitude: float = TELESCOPE_LATITUDE) -> "FrbHyperparams":
        return cls(*map(float, theta), latitude=latitude)


_GL_CACHE: dict = {}


def _gauss_legendre(n: int):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


class FrbIntensity(IntensityModel):
    """Detection intensity over (ra, dec, DM), uniform in ra.

    The unnormalized shape is

        g = exp(c / (1 + d cos dec) - u^1.5) * cos(dec) * u^3,
        u = (DM + DM0 / cos^b(latitude - dec)) / DM*,

    and the intensity is ``n_frbs * g / (integral of g) / (ra extent)`` so
    that the total mass equals ``n_frbs``.
    """

    kind = "frb"
    varying_dims = (1, 2)

    def __init__(self, theta, domain: Domain = None):
        super().__init__(domain or frb_domain())
        if not isinstance(theta, FrbHyperparams):
            theta = FrbHyperparams.from_array(theta)
        self.theta = theta
        self._validate()
        self.shape_integral = self._dec_dm_integral()
        if not (np.isfinite(self.shape_integral) and self.shape_integral > 0):
            raise ModelConfigurationError(f"degenerate FRB shape integral {self.shape_integral}")
        self.scale = theta.n_frbs / (self.shape_integral * self.domain.extent[0])

    def _validate(self):
        t = self.theta
        vals = t.as_array()
        if not np.all(np.isfinite(vals)):
            raise ModelConfigurationError(f"non-finite FRB hyperparameters {vals}")
        for name in ("n_frbs", "b", "c", "d", "dm_star"):
            if getattr(t, name) <= 0:
                raise ModelConfigurationError(f"{name} must be positive, got {getattr(t, name)}")
        if t.dm0 < 0 and self.domain.lower[2] >= 0:
            # DM + DM0/cos^b must stay nonnegative over the domain
            raise ModelConfigurationError(f"dm0 must be nonnegative, got {t.dm0}")
        if self.domain.dim != 3:
            raise ModelConfigurationError("the FRB intensity lives on a 3-d (ra, dec, dm) domain")
        zenith = t.latitude - np.array([self.domain.lower[1], self.domain.upper[1]])
        if np.any(np.cos(np.deg2rad(zenith)) <= 0) or np.any(np.abs(zenith) >= 90):
            raise ModelConfigurationError(
                "cos(latitude - dec) must be positive over the declination range"
            )
        if self.domain.lower[1] < -90 or self.domain.upper[1] > 90:
            raise ModelConfigurationError("declination bounds must lie within [-90, 90]")

    @staticmethod
    def _cos_dec(dec):
        c = np.cos(np.deg2rad(dec))
        return np.where(np.abs(np.abs(dec) - 90.0) < 1e-12, 0.0, np.maximum(c, 0.0))

    def _offset(self, dec):
        t = self.theta
        return t.dm0 / np.cos(np.deg2rad(t.latitude - dec)) ** t.b

    def _log_shape(self, points):
        t = self.theta
        dec = points[..., 1]
        dm = points[..., 2]
        cosd = self._cos_dec(dec)
        u = (dm + self._offset(dec)) / t.dm_star
        with np.errstate(divide="ignore", invalid="ignore"):
            out = t.c / (1.0 + t.d * cosd) - u**1.5 + np.log(cosd) + 3.0 * np.log(u)
        return np.where((cosd > 0) & (u > 0), out, -np.inf)

    def _shape(self, points):
        return np.exp(self._log_shape(points))

    def _dm_integral(self, dec):
        """Closed-form integral of the shape over the DM range at fixed dec."""
        t = self.theta
        off = self._offset(dec)
        t_lo = (np.maximum(self.domain.lower[2] + off, 0.0) / t.dm_star) ** 1.5
        t_hi = (np.maximum(self.domain.upper[2] + off, 0.0) / t.dm_star) ** 1.5
        a = 8.0 / 3.0
        # pick the complementary form in the upper tail to avoid cancellation
        frac = np.where(
            t_lo > a,
            special.gammaincc(a, t_lo) - special.gammaincc(a, t_hi),
            special.gammainc(a, t_hi) - special.gammainc(a, t_lo),
        )
        cosd = self._cos_dec(dec)
        return (
            np.exp(t.c / (1.0 + t.d * cosd))
            * cosd
            * t.dm_star
            * (2.0 / 3.0)
            * special.gamma(a)
            * frac
        )

    def _dec_dm_integral(self, rtol=1e-10, n0=64, max_n=4096):
        lo, hi = self.domain.lower[1], self.domain.upper[1]
        prev = None
        n = n0
        while n <= max_n:
            x, w = _gauss_legendre(n)
            dec = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
            val = 0.5 * (hi - lo) * float(np.dot(w, self._dm_integral(dec)))
            if prev is not None and abs(val - prev) <= rtol * abs(val):
                return val
            prev = val
            n *= 2
        raise NumericalIntegrationError("declination quadrature of the FRB shape did not converge")

    @cached_property
    def total_mass(self) -> float:
        # closed-form DM integral and Gauss-Legendre in dec; equals n_frbs up to rounding
        return self.scale * self.shape_integral * self.domain.extent[0]

    def params(self):
        return {k: float(getattr(self.theta, k)) for k in FRB_PARAM_NAMES}


def make_intensity(config: dict) -> IntensityModel:
    """Build a model from a ``{"kind", "params", "domain"}`` mapping."""
    unknown = set(config) - {"kind", "params", "domain"}
    if unknown:
        raise ModelConfigurationError(f"unknown intensity keys: {sorted(unknown)}")
    kind = config.get("kind")
    params = dict(config.get("params", {}))
    domain = Domain.from_dict(config["domain"]) if "domain" in config else None
    try:
        if kind == "homogeneous":
            return HomogeneousIntensity(params.pop("rate"), domain, **params)
        if kind == "bivariate-gaussian":
            if not params:
                params = {"mean": BENCHMARK_MEAN_1, "cov": BENCHMARK_COV_1}
            return GaussianIntensity(domain=domain, **params)
        if kind == "gaussian-mixture":
            if not params or set(params) <= {"q", "total"}:
                q = params.get("q", BENCHMARK_MIXING_WEIGHT)
                return GaussianMixtureIntensity(
                    [q, 1 - q], [BENCHMARK_MEAN_1, BENCHMARK_MEAN_2], [BENCHMARK_COV_1, BENCHMARK_COV_2],
                    total=params.get("total", 200.0), domain=domain,
                )
            return GaussianMixtureIntensity(domain=domain, **params)
        if kind == "frb":
            theta = FrbHyperparams(**params)
            return FrbIntensity(theta, domain)
    except (KeyError, TypeError) as exc:
        raise ModelConfigurationError(f"bad parameters for intensity kind {kind!r}: {exc}") from exc
    raise ModelConfigurationError(f"unknown intensity kind {kind!r}")


# -- parametric families (theta vector -> model) --------------------------------

def _build_frb(theta, domain):
    return FrbIntensity(theta, domain)


def _build_homogeneous(theta, domain):
    return HomogeneousIntensity(theta[0], domain)


@dataclass(frozen=True)
class ModelFamily:
    """Maps a hyperparameter vector to an intensity model.

    ``count_index`` names the parameter that scales the expected event count,
    which is what the count-scaling factor of a P_C run multiplies.
    """

    name: str
    param_names: tuple
    domain: Domain
    builder: object
    count_index: int = 0

    def build(self, theta) -> IntensityModel:
        return self.builder(np.asarray(theta, dtype=float), self.domain)

    def scale_counts(self, theta, factor: float) -> np.ndarray:
        theta = np.array(theta, dtype=float)
        theta[..., self.count_index] *= factor
        return theta

    @property
    def n_params(self) -> int:
        return len(self.param_names)


def frb_family(domain: Domain = None) -> ModelFamily:
    return ModelFamily("frb", FRB_PARAM_NAMES, domain or frb_domain(), _build_frb)


def homogeneous_family(domain: Domain = None) -> ModelFamily:
    return ModelFamily("homogeneous", ("rate",), domain or unit_square(), _build_homogeneous)
