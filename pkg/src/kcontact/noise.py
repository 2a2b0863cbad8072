"""Measurement-error models for event positions.

A noise model describes the displacement ``eps = y - x`` between an observed
position ``y`` and the true position ``x``.  Densities are evaluated at
displacements, so the likelihood term for an event is ``density(y - x)``.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import InvalidInputError, UnsupportedModelError
from .geometry import Domain


class NoiseModel:
    kind = "abstract"
    dim: int

    def sample(self, seed=None, size=None) -> np.ndarray:
        """Displacement draws, shape ``(dim,)`` or ``(size, dim)``."""
        rng = np.random.default_rng(seed)
        n = 1 if size is None else int(size)
        out = self._sample(rng, n)
        return out[0] if size is None else out

    def _sample(self, rng, n: int) -> np.ndarray:
        raise NotImplementedError

    def density(self, e):
        raise NotImplementedError

    def log_density(self, e):
        with np.errstate(divide="ignore"):
            return np.log(self.density(e))

    def radial_scale(self, weights=None) -> float:
        """Scale ``s`` such that the metric norm of eps is ``s * chi(dim)``."""
        raise UnsupportedModelError(f"{self.kind} noise has no closed-form radial law")

    @property
    def is_degenerate(self) -> bool:
        return False


def sample_noise(model: NoiseModel, seed=None, size=None) -> np.ndarray:
    return model.sample(seed, size)


class DegenerateNoise(NoiseModel):
    """Point mass at zero displacement.

    ``density`` reports ``inf`` at the origin as a sentinel for the atom;
    ``log_density`` is taken with respect to the atom itself (0 at the
    origin, ``-inf`` elsewhere) so likelihoods stay finite.
    """

    kind = "degenerate-zero"

    def __init__(self, dim: int):
        self.dim = int(dim)

    def _sample(self, rng, n):
        return np.zeros((n, self.dim))

    def density(self, e):
        e = np.asarray(e, dtype=float)
        zero = np.all(e == 0.0, axis=-1)
        return np.where(zero, np.inf, 0.0)

    def log_density(self, e):
        e = np.asarray(e, dtype=float)
        zero = np.all(e == 0.0, axis=-1)
        return np.where(zero, 0.0, -np.inf)

    def radial_scale(self, weights=None) -> float:
        return 0.0

    @property
    def is_degenerate(self) -> bool:
        return True

    def __repr__(self):
        return f"DegenerateNoise(dim={self.dim})"


class GaussianNoise(NoiseModel):
    """Independent zero-mean normal displacement per coordinate."""

    kind = "isotropic-gaussian"

    def __init__(self, sigma, dim: int = None):
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if dim is not None and sigma.size == 1:
            sigma = np.full(int(dim), sigma[0])
        if np.any(~np.isfinite(sigma)) or np.any(sigma < 0):
            raise InvalidInputError(f"sigma must be finite and >= 0, got {sigma}")
        self.sigma = sigma
        self.dim = sigma.size

    def _sample(self, rng, n):
        return rng.standard_normal((n, self.dim)) * self.sigma

    def log_density(self, e):
        e = np.asarray(e, dtype=float)
        if np.any(self.sigma == 0):
            raise UnsupportedModelError("zero-sigma coordinates have no Lebesgue density")
        z = e / self.sigma
        return -0.5 * np.sum(z * z, axis=-1) - np.sum(np.log(self.sigma)) - 0.5 * self.dim * np.log(2 * np.pi)

    def density(self, e):
        return np.exp(self.log_density(e))

    def radial_scale(self, weights=None) -> float:
        w = np.ones(self.dim) if weights is None else np.asarray(weights, dtype=float)
        s = w * self.sigma
        if not np.allclose(s, s[0], rtol=1e-12, atol=0.0):
            raise UnsupportedModelError(
                "radial law needs equal weighted sigmas in every coordinate, got "
                f"{s.tolist()}"
            )
        return float(s[0])

    @property
    def is_degenerate(self) -> bool:
        return bool(np.all(self.sigma == 0))

    def __repr__(self):
        return f"GaussianNoise(sigma={self.sigma.tolist()})"


class GriddedNoise(NoiseModel):
    """Piecewise-constant displacement density on a regular patch.

    ``weights`` has one entry per cell (any array shape, one axis per
    coordinate); a draw picks a cell by weight and then a uniform point in
    it.
    """

    kind = "gridded-empirical"

    def __init__(self, lower, upper, weights, normalize: bool = False):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        w = np.asarray(weights, dtype=float)
        if w.ndim == 1 and self.lower.size > 1:
            raise InvalidInputError("weights must have one axis per coordinate")
        if w.ndim != self.lower.size or self.upper.size != self.lower.size:
            raise InvalidInputError("patch bounds and weight grid dimensions disagree")
        if np.any(self.upper <= self.lower):
            raise InvalidInputError("empty noise patch")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidInputError("grid weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise InvalidInputError("grid weights sum to zero")
        if normalize:
            w = w / total
        elif abs(total - 1.0) > 1e-9:
            raise InvalidInputError(f"grid weights sum to {total}, expected 1")
        self.weights = w
        self.dim = self.lower.size
        self.shape = w.shape
        self.cell = (self.upper - self.lower) / np.array(self.shape)
        self.cell_volume = float(np.prod(self.cell))
        self._cdf = np.cumsum(w.ravel())
        self._cdf /= self._cdf[-1]

    def _sample(self, rng, n):
        u = rng.random(n)
        flat = np.minimum(np.searchsorted(self._cdf, u, side="right"), self._cdf.size - 1)
        idx = np.stack(np.unravel_index(flat, self.shape), axis=-1)
        return self.lower + (idx + rng.random((n, self.dim))) * self.cell

    def cell_index(self, e):
        e = np.asarray(e, dtype=float)
        rel = (e - self.lower) / self.cell
        idx = np.floor(rel).astype(int)
        shape = np.array(self.shape)
        # the closed upper edge belongs to the last cell
        idx = np.where((rel == shape) & (idx == shape), shape - 1, idx)
        ok = np.all((idx >= 0) & (idx < shape), axis=-1)
        return idx, ok

    def density(self, e):
        idx, ok = self.cell_index(e)
        idx = np.where(ok[..., None], idx, 0)
        vals = self.weights[tuple(np.moveaxis(idx, -1, 0))] / self.cell_volume
        return np.where(ok, vals, 0.0)

    def __repr__(self):
        return f"GriddedNoise(lower={self.lower.tolist()}, upper={self.upper.tolist()}, shape={self.shape})"


class ProductNoise(NoiseModel):
    """Independent noise blocks acting on disjoint coordinate subsets."""

    kind = "product"

    def __init__(self, blocks):
        self.blocks = [(tuple(int(i) for i in dims), model) for dims, model in blocks]
        used = [i for dims, _ in self.blocks for i in dims]
        if sorted(used) != list(range(len(used))):
            raise InvalidInputError(f"noise blocks must partition the coordinates, got {used}")
        for dims, model in self.blocks:
            if len(dims) != model.dim:
                raise InvalidInputError("block dimension mismatch")
        self.dim = len(used)

    def _sample(self, rng, n):
        out = np.empty((n, self.dim))
        for dims, model in self.blocks:
            out[:, list(dims)] = model._sample(rng, n)
        return out

    def log_density(self, e):
        e = np.asarray(e, dtype=float)
        total = 0.0
        for dims, model in self.blocks:
            total = total + model.log_density(e[..., list(dims)])
        return total

    def density(self, e):
        e = np.asarray(e, dtype=float)
        total = 1.0
        for dims, model in self.blocks:
            total = total * model.density(e[..., list(dims)])
        return total

    @property
    def is_degenerate(self) -> bool:
        return all(m.is_degenerate for _, m in self.blocks)

    def radial_scale(self, weights=None) -> float:
        w = np.ones(self.dim) if weights is None else np.asarray(weights, dtype=float)
        scales = [m.radial_scale(w[list(d)]) for d, m in self.blocks]
        if self.is_degenerate:
            return 0.0
        if not np.allclose(scales, scales[0], rtol=1e-12, atol=0.0):
            raise UnsupportedModelError("blocks have different radial scales")
        return float(scales[0])

    def __repr__(self):
        return f"ProductNoise({self.blocks})"


def metric_norm(e, weights=None) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    w = 1.0 if weights is None else np.asarray(weights, dtype=float)
    return np.sqrt(np.sum((e * w) ** 2, axis=-1))


def radial_max_cdf(model: NoiseModel, k: int, x, weights=None):
    """CDF of the largest metric displacement norm among ``k`` i.i.d. draws."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    s = model.radial_scale(weights)
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return np.where(x >= 0, 1.0, 0.0)
    return stats.chi(model.dim, scale=s).cdf(x) ** k


def radial_max_pdf(model: NoiseModel, k: int, x, weights=None):
    """Density of the largest metric displacement norm among ``k`` i.i.d. draws.

    For a single norm with pdf ``f`` and cdf ``F`` this is ``k F^(k-1) f``.
    The degenerate model has its mass at 0; the density there is reported as
    ``inf`` (the same sentinel ``DegenerateNoise.density`` uses).
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if isinstance(model, GriddedNoise):
        raise UnsupportedModelError("gridded noise is per-event; no i.i.d. radial law")
    s = model.radial_scale(weights)
    x = np.asarray(x, dtype=float)
    if s == 0.0:
        return np.where(x == 0, np.inf, 0.0)
    law = stats.chi(model.dim, scale=s)
    return k * law.cdf(x) ** (k - 1) * law.pdf(x)


def radial_max_ppf(model: NoiseModel, k: int, q, weights=None):
    s = model.radial_scale(weights)
    q = np.asarray(q, dtype=float)
    if s == 0.0:
        return np.zeros_like(q)
    return stats.chi(model.dim, scale=s).ppf(q ** (1.0 / k))


def perturb(points, noise, domain: Domain, seed=None, max_retries: int = 1000, sign: int = 1):
    """Return ``points + sign * eps`` with every result inside ``domain``.

    ``noise`` is one model shared by all points or a list with one model per
    point.  Draws that leave the domain are redrawn (periodic coordinates
    are wrapped rather than rejected).
    """
    rng = np.random.default_rng(seed)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    out = np.empty_like(pts)
    if isinstance(noise, NoiseModel):
        todo = np.arange(n)
        for _ in range(max_retries):
            if todo.size == 0:
                break
            cand = domain.wrap(pts[todo] + sign * noise._sample(rng, todo.size))
            ok = domain.contains(cand)
            out[todo[ok]] = cand[ok]
            todo = todo[~ok]
        if todo.size:
            raise InvalidInputError(f"{todo.size} perturbed points left the domain after {max_retries} retries")
        return out
    if len(noise) != n:
        raise InvalidInputError("need one noise model per point")
    for i, model in enumerate(noise):
        for _ in range(max_retries):
            cand = domain.wrap(pts[i] + sign * model._sample(rng, 1)[0])
            if domain.contains(cand):
                out[i] = cand
                break
        else:
            raise InvalidInputError(f"point {i} left the domain after {max_retries} retries")
    return out
