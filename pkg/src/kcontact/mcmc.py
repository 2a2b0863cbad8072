"""Hierarchical Bayesian fitting of intensity hyperparameters.

The sampler is Metropolis-within-Gibbs with three blocks per iteration:

1. a joint Gaussian random-walk proposal for the hyperparameters,
2. per event, an independence proposal of the true position drawn from the
   event's localization density,
3. per event, a Gaussian random-walk proposal of the true DM with step equal
   to the event's DM measurement sigma.

The latent state is the full ``(n, dim)`` array of true coordinates; blocks
2 and 3 are vectorized across events.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from .catalog import EventCatalog, atomic_write_text
from .diagnostics import DiagnosticsReport, diagnose
from .errors import ConfigError, DataError, InvalidInputError, ModelConfigurationError
from .geometry import coordinate_difference
from .intensity import ModelFamily, frb_family, homogeneous_family
from .noise import DegenerateNoise, GaussianNoise, ProductNoise
from .simulate import derived_seed, make_dataset

CHAIN_MAGIC = "#kcontact-chain v1"


# -- priors ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Marginal:
    """One prior marginal: ``uniform(low, high)`` or ``normal(mean, sd)``.

    A normal marginal may be truncated below at ``low`` (and renormalized).
    Densities are evaluated in closed form; quantiles go through scipy.
    """

    name: str
    family: str
    a: float
    b: float
    low: float = -np.inf

    def __post_init__(self):
        if self.family == "uniform":
            if not self.b > self.a:
                raise ConfigError(f"{self.name}: empty uniform range")
            object.__setattr__(self, "low", float(self.a))
        elif self.family == "normal":
            if not self.b > 0:
                raise ConfigError(f"{self.name}: sd must be positive")
        else:
            raise ConfigError(f"{self.name}: unknown prior family {self.family!r}")

    @property
    def truncated(self) -> bool:
        return bool(self.family == "normal" and np.isfinite(self.low))

    @property
    def dist(self):
        if self.family == "uniform":
            return stats.uniform(self.a, self.b - self.a)
        if self.truncated:
            return stats.truncnorm((self.low - self.a) / self.b, np.inf, loc=self.a, scale=self.b)
        return stats.norm(self.a, self.b)

    @property
    def support(self) -> tuple:
        if self.family == "uniform":
            return float(self.a), float(self.b)
        return float(self.low), float(np.inf)

    def logpdf(self, x) -> float:
        lo, hi = self.support
        if not (lo <= x <= hi):
            return -np.inf
        if self.family == "uniform":
            return -np.log(self.b - self.a)
        z = (x - self.a) / self.b
        out = -0.5 * z * z - np.log(self.b) - 0.5 * np.log(2 * np.pi)
        if self.truncated:
            out -= special.log_ndtr((self.a - self.low) / self.b)
        return float(out)

    def cdf(self, x):
        return self.dist.cdf(x)

    def ppf(self, u):
        return self.dist.ppf(u)

    def central_width(self, level: float = 0.9) -> float:
        a = 0.5 * (1.0 - level)
        return float(self.ppf(1.0 - a) - self.ppf(a))


def uniform_prior(name: str, low: float, high: float) -> Marginal:
    return Marginal(name, "uniform", float(low), float(high))


def normal_prior(name: str, mean: float, sd: float, low: float = -np.inf) -> Marginal:
    return Marginal(name, "normal", float(mean), float(sd), float(low))


def positive_normal(name: str, mean: float, sd: float) -> Marginal:
    """Normal(mean, sd) truncated to (0, inf) and renormalized."""
    return normal_prior(name, mean, sd, low=0.0)


@dataclass(frozen=True)
class Hyperprior:
    marginals: tuple

    @property
    def names(self) -> tuple:
        return tuple(m.name for m in self.marginals)

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def truncation_flags(self) -> dict:
        return {m.name: m.truncated for m in self.marginals}

    def in_support(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        for m, x in zip(self.marginals, theta):
            lo, hi = m.support
            if not (lo <= x <= hi):
                return False
        return True

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,) or not np.all(np.isfinite(theta)):
            return -np.inf
        return float(sum(m.logpdf(x) for m, x in zip(self.marginals, theta)))

    def ppf(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.stack([m.ppf(u[..., j]) for j, m in enumerate(self.marginals)], axis=-1)

    def cdf(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return np.stack([m.cdf(theta[..., j]) for j, m in enumerate(self.marginals)], axis=-1)

    def initial_covariance(self, fraction: float = 0.01) -> np.ndarray:
        """Diagonal covariance with scales equal to ``fraction`` of each central 90% width."""
        return np.diag([(fraction * m.central_width(0.9)) ** 2 for m in self.marginals])


def frb_hyperprior(truncate: bool = True) -> Hyperprior:
    """Independent hyperpriors for (n_frbs, b, c, d, dm0, dm_star).

    ``b``, ``dm0`` and ``dm_star`` have normal priors truncated to positive
    values; the intensity is undefined otherwise.
    """
    if truncate:
        b = positive_normal("b", 1.45, 0.12)
        dm0 = positive_normal("dm0", 560.0, 560.0)
        dm_star = positive_normal("dm_star", 404.0, 404.0)
    else:
        b = normal_prior("b", 1.45, 0.12)
        dm0 = normal_prior("dm0", 560.0, 560.0)
        dm_star = normal_prior("dm_star", 404.0, 404.0)
    return Hyperprior((
        uniform_prior("n_frbs", 128.8, 2362.8),
        b,
        uniform_prior("c", 0.0, 10.0),
        uniform_prior("d", 0.0, 10.0),
        dm0,
        dm_star,
    ))


def homogeneous_hyperprior(low: float = 1.0, high: float = 1000.0) -> Hyperprior:
    return Hyperprior((uniform_prior("rate", low, high),))


def lhs_starts(prior: Hyperprior, n_chains: int, seed=None, valid=None, max_tries: int = 100) -> np.ndarray:
    """Latin hypercube starting values, shape ``(n_chains, prior.dim)``.

    Each parameter gets one uniform draw inside each of ``n_chains``
    equal-probability strata, mapped through the marginal inverse CDF; the
    stratum order is permuted independently per parameter.  If ``valid`` is
    given, rows it rejects are redrawn inside the same strata.
    """
    if n_chains < 1:
        raise InvalidInputError("n_chains must be >= 1")
    rng = np.random.default_rng(seed)
    strata = np.stack([rng.permutation(n_chains) for _ in range(prior.dim)], axis=1)
    starts = prior.ppf((strata + rng.random(strata.shape)) / n_chains)
    if valid is None:
        return starts
    for c in range(n_chains):
        for _ in range(max_tries):
            if valid(starts[c]):
                break
            starts[c] = prior.ppf((strata[c] + rng.random(prior.dim)) / n_chains)
        else:
            raise ConfigError(f"no valid starting value found in the strata of chain {c}")
    return starts


def _valid_start(family: ModelFamily, catalog: EventCatalog, prior: Hyperprior):
    def check(theta) -> bool:
        if not np.isfinite(prior.logpdf(theta)):
            return False
        try:
            model = family.build(theta)
        except ModelConfigurationError:
            return False
        return bool(np.all(np.isfinite(model.log_eval(catalog.observed))))
    return check


# -- likelihood -------------------------------------------------------------------------

def log_likelihood(theta, latent, family: ModelFamily, catalog: EventCatalog = None, model=None) -> float:
    """Log-likelihood of latent true coordinates and observations.

    ``-C(theta) + sum log Lambda(x_i) + sum log f(y_i | x_i) - log n!``.  The
    noise terms need ``catalog``; without it they are omitted (noiseless
    data).  Returns ``-inf`` if any latent point has zero intensity.
    """
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError(f"non-finite hyperparameters {theta}")
    model = model or family.build(theta)
    latent = np.asarray(latent, dtype=float).reshape(-1, family.domain.dim)
    n = latent.shape[0]
    total = -model.total_mass - special.gammaln(n + 1)
    if n == 0:
        return float(total)
    loglam = model.log_eval(latent)
    if np.any(np.isneginf(loglam)):
        return -np.inf
    total += float(np.sum(loglam))
    if catalog is not None:
        if len(catalog) != n:
            raise InvalidInputError("catalog and latent positions differ in length")
        disp = coordinate_difference(latent, catalog.observed, family.domain)
        for i in range(n):
            total += float(catalog.noise(i).log_density(disp[i]))
    return float(total)


# -- chain ------------------------------------------------------------------------------

@dataclass
class ChainConfig:
    n_iter: int = 3000
    burn_in: int = 1000
    adapt_at: int = 1000
    thin: int = 1
    seed: object = 0
    initial: tuple = None
    adapt_scale: float = None
    init_scale_frac: float = 0.01
    adapt_stages: int = 4
    proposal_buffer: int = 256
    stall_window: int = 500

    def __post_init__(self):
        if self.n_iter < 1 or self.burn_in < 0 or self.thin < 1:
            raise ConfigError("need n_iter >= 1, burn_in >= 0, thin >= 1")
        if self.burn_in >= self.n_iter:
            raise ConfigError(f"burn_in {self.burn_in} leaves no draws out of n_iter {self.n_iter}")
        if self.adapt_at < 0:
            raise ConfigError("adapt_at must be >= 0")
        if self.proposal_buffer < 1 or self.stall_window < 1:
            raise ConfigError("proposal_buffer and stall_window must be positive")

    def seed_key(self) -> tuple:
        s = self.seed
        return tuple(int(v) for v in (s if isinstance(s, (list, tuple)) else [s]))

    def digest(self) -> str:
        d = asdict(self)
        d["seed"] = list(self.seed_key())
        return hashlib.sha256(json.dumps(d, sort_keys=True, default=list).encode()).hexdigest()[:16]


@dataclass
class ChainState:
    theta: np.ndarray
    latent: np.ndarray
    iteration: int
    proposal_cov: np.ndarray
    accepted: dict = field(default_factory=lambda: {"theta": 0, "position": 0, "dm": 0})

    def check(self, domain) -> None:
        if not np.all(domain.contains(self.latent)):
            raise AssertionError("latent coordinates left the domain")
        cov = self.proposal_cov
        if not np.allclose(cov, cov.T) or np.min(np.linalg.eigvalsh(cov)) < -1e-12 * np.max(np.abs(cov)):
            raise AssertionError("proposal covariance is not symmetric PSD")


@dataclass
class PosteriorChain:
    param_names: tuple
    draws: np.ndarray
    log_post: np.ndarray
    accept: np.ndarray
    iterations: np.ndarray
    seed: tuple
    burn_in: int
    thin: int
    acceptance: dict
    proposal_cov: np.ndarray = None
    flags: list = field(default_factory=list)
    config_hash: str = ""
    catalog_hash: str = ""
    final_state: ChainState = field(default=None, repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    def interval(self, level: float = 0.9) -> np.ndarray:
        a = 0.5 * (1.0 - level)
        return np.quantile(self.draws, [a, 1.0 - a], axis=0).T

    def header(self) -> dict:
        return {
            "seed": list(self.seed),
            "config_hash": self.config_hash,
            "catalog_hash": self.catalog_hash,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "param_names": list(self.param_names),
            "acceptance": self.acceptance,
            "flags": self.flags,
        }

    # CSV: version line, one JSON header line, then a column header and rows
    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write(CHAIN_MAGIC + "\n")
        buf.write("#" + json.dumps(self.header(), sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["iteration", *self.param_names, "log_post", "accept_theta", "accept_position", "accept_dm"])
        for it, th, lp, acc in zip(self.iterations, self.draws, self.log_post, self.accept):
            writer.writerow([int(it), *map(repr, map(float, th)), repr(float(lp)), *map(repr, map(float, acc))])
        atomic_write_text(path, buf.getvalue())

    @classmethod
    def from_csv(cls, path) -> "PosteriorChain":
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise DataError(f"cannot read chain {path}: {exc}") from exc
        if len(lines) < 3 or lines[0].strip() != CHAIN_MAGIC:
            raise DataError(f"{path}: not a kcontact chain file (bad or missing version header)")
        try:
            head = json.loads(lines[1][1:])
            rows = np.array([[float(v) for v in r] for r in csv.reader(lines[3:]) if r], dtype=float)
        except (ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: malformed chain file: {exc}") from exc
        p = len(head["param_names"])
        rows = rows.reshape(-1, p + 5)
        return cls(
            param_names=tuple(head["param_names"]),
            draws=rows[:, 1:1 + p],
            log_post=rows[:, 1 + p],
            accept=rows[:, 2 + p:],
            iterations=rows[:, 0].astype(int),
            seed=tuple(head["seed"]),
            burn_in=head["burn_in"],
            thin=head["thin"],
            acceptance=head["acceptance"],
            flags=head["flags"],
            config_hash=head["config_hash"],
            catalog_hash=head["catalog_hash"],
        )

    # binary: numpy .npz with the same header stored as a JSON string
    def to_npz(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(f".{path.name}.tmp.npz")
        np.savez_compressed(
            tmp,
            version=np.array(CHAIN_MAGIC),
            header=np.array(json.dumps(self.header(), sort_keys=True)),
            iterations=self.iterations,
            draws=self.draws,
            log_post=self.log_post,
            accept=self.accept,
        )
        tmp.replace(path)

    @classmethod
    def from_npz(cls, path) -> "PosteriorChain":
        try:
            with np.load(path, allow_pickle=False) as z:
                if str(z["version"]) != CHAIN_MAGIC:
                    raise DataError(f"{path}: unsupported chain version {z['version']}")
                head = json.loads(str(z["header"]))
                data = {k: z[k] for k in ("iterations", "draws", "log_post", "accept")}
        except (OSError, KeyError, ValueError) as exc:
            raise DataError(f"cannot read chain {path}: {exc}") from exc
        return cls(
            param_names=tuple(head["param_names"]),
            seed=tuple(head["seed"]),
            burn_in=head["burn_in"],
            thin=head["thin"],
            acceptance=head["acceptance"],
            flags=head["flags"],
            config_hash=head["config_hash"],
            catalog_hash=head["catalog_hash"],
            **data,
        )


def read_chain(path) -> PosteriorChain:
    return PosteriorChain.from_npz(path) if str(path).endswith(".npz") else PosteriorChain.from_csv(path)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    jitter = 0.0
    scale = float(np.mean(np.diag(cov))) or 1.0
    for _ in range(10):
        try:
            return np.linalg.cholesky(cov + jitter * np.eye(cov.shape[0]))
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10, 1e-12 * scale)
    raise ModelConfigurationError("proposal covariance is not positive definite")


class _Latent:
    """Latent coordinates with cached per-event log terms."""

    def __init__(self, catalog: EventCatalog, rng, buffer: int):
        self.cat = catalog
        self.dom = catalog.domain
        self.pos = list(catalog.position_dims)
        self.dm = catalog.dm_dim
        self.y = catalog.observed
        self.x = catalog.observed.copy()
        self.rng = rng
        self.buffer = buffer
        self.moving = np.array([not m.is_degenerate for m in catalog.position_noise])
        self.logf_pos = np.zeros(len(catalog))
        for i in np.flatnonzero(self.moving):
            disp = coordinate_difference(self.x[i], self.y[i], self.dom)[self.pos]
            self.logf_pos[i] = catalog.position_noise[i].log_density(disp)
        if self.dm is not None:
            self.logf_dm = self._dm_logf(self.x[:, self.dm])
        else:
            self.logf_dm = np.zeros(len(catalog))
        self._cursor = buffer

    def _dm_logf(self, dm):
        s = self.cat.dm_sigma
        z = (self.y[:, self.dm] - dm) / s
        return -0.5 * z * z - np.log(s) - 0.5 * np.log(2 * np.pi)

    def _refill(self):
        n, B, p = len(self.cat), self.buffer, len(self.pos)
        self._eps = np.zeros((B, n, p))
        self._eps_logf = np.zeros((B, n))
        for i in np.flatnonzero(self.moving):
            noise = self.cat.position_noise[i]
            e = noise._sample(self.rng, B)
            self._eps[:, i] = e
            self._eps_logf[:, i] = noise.log_density(e)
        self._cursor = 0

    def position_step(self, model, loglam):
        """Independence proposals for every event; returns the acceptance mask."""
        if not np.any(self.moving):
            return np.zeros(len(self.cat), dtype=bool)
        if self._cursor >= self.buffer:
            self._refill()
        eps, eps_logf = self._eps[self._cursor], self._eps_logf[self._cursor]
        self._cursor += 1
        prop = self.x.copy()
        prop[:, self.pos] = self.y[:, self.pos] - eps
        prop = self.dom.wrap(prop)
        lam_prop = model.log_eval(prop)
        with np.errstate(invalid="ignore"):
            log_r = lam_prop - loglam
        u = np.log(self.rng.random(len(self.cat)))
        # a current state outside the localization support is left at the first valid proposal
        ok = self.moving & np.isfinite(lam_prop) & ((u < log_r) | np.isneginf(self.logf_pos))
        self.x[ok] = prop[ok]
        self.logf_pos[ok] = eps_logf[ok]
        loglam[ok] = lam_prop[ok]
        return ok

    def dm_step(self, model, loglam):
        if self.dm is None:
            return np.zeros(len(self.cat), dtype=bool)
        prop = self.x.copy()
        prop[:, self.dm] += self.cat.dm_sigma * self.rng.standard_normal(len(self.cat))
        lam_prop = model.log_eval(prop)
        logf_prop = self._dm_logf(prop[:, self.dm])
        with np.errstate(invalid="ignore"):
            log_r = lam_prop - loglam + logf_prop - self.logf_dm
        u = np.log(self.rng.random(len(self.cat)))
        ok = np.isfinite(lam_prop) & (u < log_r)
        self.x[ok] = prop[ok]
        self.logf_dm[ok] = logf_prop[ok]
        loglam[ok] = lam_prop[ok]
        return ok


def run_chain(catalog: EventCatalog, prior: Hyperprior, config: ChainConfig,
              family: ModelFamily = None) -> PosteriorChain:
    """One Metropolis-within-Gibbs chain.

    The hyperparameter proposal covariance starts diagonal.  At iterations
    ``adapt_at * j / adapt_stages`` (``j = 1..adapt_stages``) it is replaced
    by ``adapt_scale`` times the empirical covariance of the trailing half of
    the states so far; after ``adapt_at`` it is frozen.
    """
    if len(catalog) == 0:
        raise DataError("cannot fit an empty catalog")
    family = family or frb_family(catalog.domain)
    if family.n_params != prior.dim:
        raise ConfigError(f"prior has {prior.dim} parameters, family {family.name} needs {family.n_params}")
    seed_key = config.seed_key()
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_key)))
    d = prior.dim
    theta = (np.asarray(config.initial, dtype=float) if config.initial is not None
             else lhs_starts(prior, 1, rng)[0])
    lp = prior.logpdf(theta)
    if not np.isfinite(lp):
        raise ConfigError(f"initial hyperparameters {theta} are outside the prior support")
    model = family.build(theta)
    latent = _Latent(catalog, rng, config.proposal_buffer)
    loglam = model.log_eval(latent.x)
    if np.any(np.isneginf(loglam)):
        raise DataError("some observed events have zero intensity under the initial hyperparameters")
    n = len(catalog)
    log_nfact = special.gammaln(n + 1)
    ll_latent = -model.total_mass + float(np.sum(loglam))

    init_cov = prior.initial_covariance(config.init_scale_frac)
    cov = init_cov.copy()
    chol = _cholesky(cov)
    scale = config.adapt_scale if config.adapt_scale is not None else 2.38**2 / d
    history = np.empty((config.adapt_at, d))
    stages = max(1, config.adapt_stages)
    adapt_points = {config.adapt_at * j // stages for j in range(1, stages + 1)}
    adapt_points = {t for t in adapt_points if t >= 8}
    flags = []
    frozen_cov = None

    keep = list(range(config.burn_in, config.n_iter, config.thin))
    n_keep = len(keep)
    draws = np.empty((n_keep, d))
    log_post = np.empty(n_keep)
    accept = np.empty((n_keep, 3))
    counts = {"theta": 0, "position": 0, "dm": 0}
    kept = 0
    last_accept = 0
    stalled = False

    for t in range(config.n_iter):
        if t in adapt_points:
            # trailing half of the history so far; early transients are forgotten
            emp = np.atleast_2d(np.cov(history[t // 2:t], rowvar=False))
            if np.all(np.diag(emp) > 0):
                cov = scale * emp
                chol = _cholesky(cov)
            else:
                flags.append(f"adaptation at {t} skipped: some parameters never moved")
            if t == config.adapt_at:
                frozen_cov = cov.copy()

        # (1) hyperparameters
        prop = theta + chol @ rng.standard_normal(d)
        lp_prop = prior.logpdf(prop)
        acc_theta = False
        log_u = np.log(rng.random())
        if np.isfinite(lp_prop):
            try:
                model_prop = family.build(prop)
            except ModelConfigurationError:
                model_prop = None
            if model_prop is not None:
                loglam_prop = model_prop.log_eval(latent.x)
                if not np.any(np.isneginf(loglam_prop)):
                    ll_prop = -model_prop.total_mass + float(np.sum(loglam_prop))
                    # the noise terms are common to both states and cancel
                    if log_u < (lp_prop + ll_prop) - (lp + ll_latent):
                        theta, lp, model, loglam, ll_latent = prop, lp_prop, model_prop, loglam_prop, ll_prop
                        acc_theta = True
        if acc_theta:
            counts["theta"] += 1
            last_accept = t
        elif not stalled and t - last_accept >= config.stall_window:
            stalled = True
            msg = f"no hyperparameter proposal accepted in {config.stall_window} iterations (at {t})"
            flags.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

        # (2) positions and (3) DMs
        acc_pos = latent.position_step(model, loglam)
        acc_dm = latent.dm_step(model, loglam)
        counts["position"] += int(acc_pos.sum())
        counts["dm"] += int(acc_dm.sum())
        if acc_pos.any() or acc_dm.any():
            ll_latent = -model.total_mass + float(np.sum(loglam))

        if t < config.adapt_at:
            history[t] = theta
        if kept < n_keep and t == keep[kept]:
            draws[kept] = theta
            log_post[kept] = lp + ll_latent + latent.logf_pos.sum() + latent.logf_dm.sum() - log_nfact
            accept[kept] = (float(acc_theta), acc_pos.mean(), acc_dm.mean())
            kept += 1

    n_pos = int(latent.moving.sum())
    acceptance = {
        "theta": counts["theta"] / config.n_iter,
        "position": counts["position"] / (config.n_iter * n_pos) if n_pos else float("nan"),
        "dm": counts["dm"] / (config.n_iter * n) if catalog.dm_dim is not None else float("nan"),
    }
    state = ChainState(theta.copy(), latent.x.copy(), config.n_iter, cov.copy(), dict(counts))
    chain = PosteriorChain(
        param_names=tuple(family.param_names),
        draws=draws,
        log_post=log_post,
        accept=accept,
        iterations=np.array(keep, dtype=int),
        seed=seed_key,
        burn_in=config.burn_in,
        thin=config.thin,
        acceptance=acceptance,
        proposal_cov=cov.copy(),
        flags=flags,
        config_hash=config.digest(),
        catalog_hash=catalog.digest(),
        final_state=state,
    )
    chain.frozen_cov = frozen_cov
    return chain


def _run_one(args):
    catalog, prior, config, family = args
    return run_chain(catalog, prior, config, family)


def run_chains(catalog: EventCatalog, prior: Hyperprior, config: ChainConfig, n_chains: int,
               family: ModelFamily = None, workers: int = 1) -> list:
    """``n_chains`` independent chains from latin hypercube starts.

    Chain ``c`` is seeded from ``(seed, c)`` and started from row ``c`` of
    the hypercube drawn with seed ``(seed, n_chains, 1 << 20)``; results do
    not depend on ``workers``.
    """
    base = config.seed_key()
    family = family or frb_family(catalog.domain)
    starts = lhs_starts(prior, n_chains, derived_seed(base[0], *base[1:], n_chains, 1 << 20),
                        valid=_valid_start(family, catalog, prior))
    tasks = []
    for c in range(n_chains):
        cfg = ChainConfig(**{**asdict(config), "seed": (*base, c), "initial": tuple(starts[c])})
        tasks.append((catalog, prior, cfg, family))
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, tasks))
    return [_run_one(t) for t in tasks]


def stack_chains(chains) -> np.ndarray:
    """Equal-length chains as an array ``(n_chains, n_draws, n_params)``."""
    n = min(c.n_draws for c in chains)
    return np.stack([c.draws[:n] for c in chains])


def pool_draws(chains) -> np.ndarray:
    return np.concatenate([c.draws for c in chains], axis=0)


def diagnose_chains(chains, rhat_threshold: float = 1.01, min_ess: float = 400.0, split: bool = False) -> DiagnosticsReport:
    meta = {
        "n_chains": len(chains),
        "n_draws": int(min(c.n_draws for c in chains)),
        "seeds": [list(c.seed) for c in chains],
        "acceptance": [c.acceptance for c in chains],
        "chain_flags": [f for c in chains for f in c.flags],
    }
    report = diagnose(stack_chains(chains), chains[0].param_names, rhat_threshold, min_ess, split, meta)
    report.flags.extend(meta["chain_flags"])
    return report


# -- synthetic catalogs and coverage ----------------------------------------------------

def simulate_catalog(model, seed=None, pos_sigma: float = 0.2, dm_sigma_range: tuple = (0.4, 3.0)) -> tuple:
    """Simulate a noisy catalog from an intensity model.

    FRB models get isotropic Gaussian (ra, dec) noise with standard
    deviation ``pos_sigma`` and per-event DM sigmas uniform on
    ``dm_sigma_range``; other models get isotropic position noise on every
    coordinate.  ``pos_sigma = 0`` gives exact positions.  Returns
    ``(catalog, dataset)``.
    """
    dom = model.domain
    has_dm = model.kind == "frb"
    position_dims = (0, 1) if has_dm else tuple(range(dom.dim))
    pos_noise = (DegenerateNoise(len(position_dims)) if pos_sigma == 0
                 else GaussianNoise(pos_sigma, len(position_dims)))
    lo, hi = dm_sigma_range
    if has_dm and not 0 < lo <= hi:
        raise ConfigError(f"bad DM sigma range {dm_sigma_range}")
    dm_sigmas = []

    def noises(rng, n):
        if not has_dm:
            return [pos_noise] * n
        s = rng.uniform(lo, hi, n)
        dm_sigmas.extend(s)
        return [ProductNoise([(position_dims, pos_noise), ((2,), GaussianNoise(v))]) for v in s]

    ds = make_dataset(model, noises, seed)
    catalog = EventCatalog(
        ids=[f"E{i:05d}" for i in range(ds.n)],
        observed=ds.noisy_positions,
        position_noise=[pos_noise] * ds.n,
        domain=dom,
        dm_sigma=np.array(dm_sigmas) if has_dm else None,
        position_dims=position_dims,
        dm_dim=2 if has_dm else None,
    )
    return catalog, ds


def synthetic_catalog(family: ModelFamily, theta, seed=None, pos_sigma: float = 0.2,
                      dm_sigma_range: tuple = (0.4, 3.0)) -> tuple:
    """``simulate_catalog`` for the member of ``family`` at ``theta``."""
    return simulate_catalog(family.build(theta), seed, pos_sigma, dm_sigma_range)


FRB_THETA_STAR = (525.0, 1.5, 6.0, 2.0, 560.0, 400.0)


@dataclass
class CoverageConfig:
    family: str = "frb"
    theta_star: tuple = FRB_THETA_STAR
    n_replicates: int = 10
    n_chains: int = 4
    n_iter: int = 3000
    burn_in: int = 1000
    adapt_at: int = 1000
    seed: int = 0
    pos_sigma: float = 0.2
    dm_sigma_range: tuple = (0.4, 3.0)
    level: float = 0.9
    prior_low: float = 1.0
    prior_high: float = 1000.0
    workers: int = 1

    def __post_init__(self):
        if self.family not in ("frb", "homogeneous"):
            raise ConfigError(f"family must be 'frb' or 'homogeneous', got {self.family!r}")
        if self.n_replicates < 1 or self.n_chains < 1:
            raise ConfigError("n_replicates and n_chains must be >= 1")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        self.theta_star = tuple(float(v) for v in self.theta_star)
        self.dm_sigma_range = tuple(self.dm_sigma_range)

    def model_family(self) -> ModelFamily:
        return frb_family() if self.family == "frb" else homogeneous_family()

    def prior(self) -> Hyperprior:
        if self.family == "frb":
            return frb_hyperprior()
        return homogeneous_hyperprior(self.prior_low, self.prior_high)

    def chain_config(self, replicate: int) -> ChainConfig:
        return ChainConfig(n_iter=self.n_iter, burn_in=self.burn_in, adapt_at=self.adapt_at,
                           seed=(self.seed, replicate, 2))


@dataclass
class CoverageTable:
    param_names: tuple
    theta_star: np.ndarray
    intervals: np.ndarray
    covered: np.ndarray
    max_rhat: np.ndarray
    n_events: np.ndarray
    level: float

    @property
    def counts(self) -> dict:
        return {name: int(self.covered[:, j].sum()) for j, name in enumerate(self.param_names)}

    @property
    def n_replicates(self) -> int:
        return self.covered.shape[0]

    def rows(self):
        for r in range(self.n_replicates):
            for j, name in enumerate(self.param_names):
                yield {
                    "replicate": r,
                    "parameter": name,
                    "truth": float(self.theta_star[j]),
                    "lower": float(self.intervals[r, j, 0]),
                    "upper": float(self.intervals[r, j, 1]),
                    "covered": int(self.covered[r, j]),
                    "max_rhat": float(self.max_rhat[r]),
                    "n_events": int(self.n_events[r]),
                }

    def to_csv(self, path) -> None:
        buf = io.StringIO()
        buf.write("#kcontact-coverage v1\n")
        rows = list(self.rows())
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        atomic_write_text(path, buf.getvalue())

    def table(self) -> str:
        lines = [f"{'parameter':<12}{'truth':>10}{'covered':>10}"]
        for j, name in enumerate(self.param_names):
            lines.append(f"{name:<12}{self.theta_star[j]:>10.4g}{self.counts[name]:>7d}/{self.n_replicates}")
        return "\n".join(lines)


def coverage_study(config: CoverageConfig, progress=None) -> CoverageTable:
    """Simulate from ``theta_star``, fit, and check central credible interval coverage."""
    family = config.model_family()
    prior = config.prior()
    theta_star = np.asarray(config.theta_star, dtype=float)
    if theta_star.shape != (prior.dim,) or not np.isfinite(prior.logpdf(theta_star)):
        raise ConfigError(f"theta_star {config.theta_star} is not in the prior support")
    R, p = config.n_replicates, prior.dim
    intervals = np.empty((R, p, 2))
    covered = np.zeros((R, p), dtype=bool)
    max_rhat = np.full(R, np.nan)
    n_events = np.zeros(R, dtype=int)
    for r in range(R):
        catalog, _ = synthetic_catalog(
            family, theta_star, derived_seed(config.seed, r, 0), config.pos_sigma, config.dm_sigma_range
        )
        n_events[r] = len(catalog)
        chains = run_chains(catalog, prior, config.chain_config(r), config.n_chains, family, config.workers)
        draws = pool_draws(chains)
        a = 0.5 * (1.0 - config.level)
        intervals[r] = np.quantile(draws, [a, 1.0 - a], axis=0).T
        covered[r] = (intervals[r, :, 0] <= theta_star) & (theta_star <= intervals[r, :, 1])
        if config.n_chains >= 2:
            max_rhat[r] = diagnose_chains(chains).max_rhat
        if progress is not None:
            progress(r, covered[r])
    return CoverageTable(tuple(family.param_names), theta_star, intervals, covered, max_rhat, n_events, config.level)
