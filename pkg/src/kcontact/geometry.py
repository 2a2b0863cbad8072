"""Domains, the weighted metric used for contact balls, and minimal bounding spheres.

Points are plain float arrays in native units (for the FRB domain: degrees of
right ascension and declination, and DM in pc cm^-3).  A :class:`Domain`
carries per-dimension bounds, metric weights and a periodicity flag; distances
are Euclidean after multiplying each coordinate difference by its weight, with
periodic coordinates compared along the shortest arc.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class Domain:
    lower: np.ndarray
    upper: np.ndarray
    weights: np.ndarray = None
    periodic: tuple = None
    names: tuple = None

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise InvalidInputError("lower and upper bounds must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise InvalidInputError("domain bounds must be finite")
        if np.any(lower >= upper):
            raise InvalidInputError(f"empty domain: lower={lower}, upper={upper}")
        d = lower.size
        weights = np.ones(d) if self.weights is None else np.asarray(self.weights, dtype=float)
        if weights.shape != (d,) or np.any(~np.isfinite(weights)) or np.any(weights <= 0):
            raise InvalidInputError(f"metric weights must be {d} positive numbers, got {weights}")
        periodic = (False,) * d if self.periodic is None else tuple(bool(p) for p in self.periodic)
        if len(periodic) != d:
            raise InvalidInputError("periodic flags must match the domain dimension")
        names = tuple(f"x{i}" for i in range(d)) if self.names is None else tuple(self.names)
        if len(names) != d:
            raise InvalidInputError("dimension names must match the domain dimension")
        for attr, value in (("lower", lower), ("upper", upper), ("weights", weights)):
            value.setflags(write=False)
            object.__setattr__(self, attr, value)
        object.__setattr__(self, "periodic", periodic)
        object.__setattr__(self, "names", names)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def extent(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def wrap(self, points):
        """Map periodic coordinates back into ``[lower, upper)``."""
        pts = np.array(points, dtype=float)
        for i, per in enumerate(self.periodic):
            if per:
                pts[..., i] = self.lower[i] + np.mod(pts[..., i] - self.lower[i], self.extent[i])
        return pts

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed domain (after wrapping)."""
        pts = self.wrap(points)
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=-1)

    def to_dict(self) -> dict:
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "weights": self.weights.tolist(),
            "periodic": list(self.periodic),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        unknown = set(d) - {"lower", "upper", "weights", "periodic", "names"}
        if unknown:
            raise InvalidInputError(f"unknown domain keys: {sorted(unknown)}")
        return cls(d["lower"], d["upper"], d.get("weights"), d.get("periodic"), d.get("names"))


def unit_square() -> Domain:
    return Domain([0.0, 0.0], [1.0, 1.0], names=("x", "y"))


def frb_domain(dec_min=-11.0, dec_max=90.0, dm_max=5000.0, weights=(1.0, 1.0, 1.0)) -> Domain:
    """(ra, dec, DM) domain; ra is periodic over [0, 360)."""
    return Domain(
        [0.0, dec_min, 0.0],
        [360.0, dec_max, dm_max],
        weights=weights,
        periodic=(True, False, False),
        names=("ra", "dec", "dm"),
    )


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float
    support: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (self.radius >= 0 and np.isfinite(self.radius)):
            raise InvalidInputError(f"sphere radius must be finite and >= 0, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))


def _check_finite(points):
    pts = np.asarray(points, dtype=float)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite coordinates")
    return pts


def coordinate_difference(a, b, domain: Domain) -> np.ndarray:
    """Componentwise ``b - a`` with periodic axes reduced to the shortest arc."""
    diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    for i, per in enumerate(domain.periodic):
        if per:
            period = domain.extent[i]
            diff[..., i] = np.mod(diff[..., i] + 0.5 * period, period) - 0.5 * period
    return diff


def metric_distance(a, b, domain: Domain):
    """Weighted Euclidean distance between points (broadcasts over leading axes)."""
    a = _check_finite(a)
    b = _check_finite(b)
    diff = coordinate_difference(a, b, domain) * domain.weights
    return np.sqrt(np.sum(diff * diff, axis=-1))


def ball_volume(radius: float, domain: Domain) -> float:
    """Lebesgue volume (native units) of the metric ball of the given radius."""
    d = domain.dim
    unit = pi ** (d / 2) / gamma(d / 2 + 1)
    return unit * radius**d / float(np.prod(domain.weights))


# -- minimal bounding sphere -------------------------------------------------

def _to_metric_space(points: np.ndarray, domain: Domain) -> tuple[np.ndarray, np.ndarray]:
    """Unwrap periodic axes around the first point and scale by the weights."""
    ref = points[0]
    local = ref + coordinate_difference(ref, points, domain)
    return local * domain.weights, ref


def _circumsphere(support: list[np.ndarray]) -> tuple[np.ndarray, float]:
    """Smallest sphere with all support points on its boundary."""
    p0 = support[0]
    if len(support) == 1:
        return p0.copy(), 0.0
    A = np.array([p - p0 for p in support[1:]])
    rhs = 0.5 * np.sum(A * A, axis=1)
    gram = A @ A.T
    lam, *_ = np.linalg.lstsq(gram, rhs, rcond=None)
    center = p0 + lam @ A
    radius = max(float(np.linalg.norm(p - center)) for p in support)
    return center, radius


def _inside(p, center, radius, eps) -> bool:
    return float(np.linalg.norm(p - center)) <= radius * (1.0 + eps) + eps


def _mtf_ball(pts: list, end: int, support: list, dim: int, eps: float):
    if support:
        center, radius = _circumsphere(support)
    else:
        center, radius = pts[0].copy(), -1.0
    if len(support) == dim + 1:
        return center, radius
    i = 0
    while i < end:
        p = pts[i]
        if radius < 0 or not _inside(p, center, radius, eps):
            center, radius = _mtf_ball(pts, i, support + [p], dim, eps)
            pts.insert(0, pts.pop(i))
        i += 1
    return center, radius


def min_bounding_sphere(points, domain: Domain, seed: int = 0) -> Sphere:
    """Smallest metric ball containing every point (randomized move-to-front).

    The input order is shuffled with ``seed`` before the move-to-front pass;
    the result is exact and does not depend on the shuffle apart from
    rounding.
    """
    pts = _check_finite(points)
    pts = np.atleast_2d(pts)
    if pts.shape[0] == 0:
        raise InvalidInputError("cannot bound an empty point set")
    if pts.shape[1] != domain.dim:
        raise InvalidInputError(f"points have dimension {pts.shape[1]}, domain has {domain.dim}")
    scaled, ref = _to_metric_space(pts, domain)
    order = np.random.default_rng(seed).permutation(len(scaled))
    work = [scaled[i] for i in order]
    scale = float(np.max(np.abs(scaled))) or 1.0
    center, radius = _mtf_ball(work, len(work), [], domain.dim, 1e-12)
    # absorb rounding so containment holds exactly for the returned radius
    radius = max(radius, float(np.max(np.linalg.norm(scaled - center, axis=1))))
    if radius < 1e-15 * scale:
        radius = 0.0
    native = domain.wrap(center / domain.weights)
    return Sphere(native, radius)
