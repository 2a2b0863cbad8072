"""Convergence diagnostics for multiple MCMC chains."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def _as_chains(chains) -> np.ndarray:
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError("expected an (n_chains, n_draws) array")
    return arr


def gelman_rubin(chains, split: bool = False):
    """Potential scale reduction factor for one parameter.

    Parameters
    ----------
    chains : array, shape (m, n)
        ``m >= 2`` chains of equal length ``n >= 4``.
    split : bool
        Halve every chain first (split-R-hat).

    Returns
    -------
    rhat : float
        ``sqrt(var_plus / W)`` with ``var_plus = (n-1)/n W + B/n``.  Constant
        chains (``W == 0``) return exactly 1.
    degenerate : bool
    """
    arr = _as_chains(chains)
    if split:
        half = arr.shape[1] // 2
        arr = np.concatenate([arr[:, :half], arr[:, half:2 * half]], axis=0)
    m, n = arr.shape
    if m < 2 or n < 4:
        raise InvalidInputError("need at least 2 chains of length >= 4")
    means = arr.mean(axis=1)
    W = arr.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0, True
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W)), False


def autocorrelation(x) -> np.ndarray:
    """Sample autocorrelation at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    size = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def effective_sample_size(chain):
    """ESS of one chain with Geyer's initial monotone sequence truncation.

    Returns ``(ess, degenerate)``.  The integrated autocorrelation time is
    built from pair sums ``rho[2t] + rho[2t+1]`` up to the first negative
    one, made monotone; the result is capped at the chain length.
    """
    x = np.asarray(chain, dtype=float)
    n = x.size
    if n < 8:
        raise InvalidInputError("need at least 8 draws")
    if np.all(x == x[0]):
        return float(n), True
    rho = autocorrelation(x)
    pairs = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs < 0)
    pairs = pairs[: stop[0]] if stop.size else pairs
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    ess = n / tau if tau > 0 else float(n)
    return float(min(ess, n)), False


@dataclass
class DiagnosticsReport:
    param_names: tuple
    rhat: dict
    ess_per_chain: dict
    ess_pooled: dict
    flags: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def max_rhat(self) -> float:
        return max(self.rhat.values())

    @property
    def min_ess(self) -> float:
        return min(self.ess_pooled.values())

    def to_dict(self) -> dict:
        return {
            "param_names": list(self.param_names),
            "rhat": self.rhat,
            "ess_per_chain": self.ess_per_chain,
            "ess_pooled": self.ess_pooled,
            "max_rhat": self.max_rhat,
            "min_ess": self.min_ess,
            "flags": self.flags,
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        lines = [f"{'parameter':<12}{'R-hat':>10}{'ESS':>12}"]
        for name in self.param_names:
            lines.append(f"{name:<12}{self.rhat[name]:>10.5f}{self.ess_pooled[name]:>12.1f}")
        lines.append(f"max R-hat {self.max_rhat:.5f}, min pooled ESS {self.min_ess:.1f}")
        lines.extend(f"! {flag}" for flag in self.flags)
        return "\n".join(lines)


def diagnose(chains, param_names, rhat_threshold: float = 1.01, min_ess: float = 400.0,
             split: bool = False, metadata: dict = None) -> DiagnosticsReport:
    """R-hat and ESS for every parameter.

    ``chains`` is an array of shape ``(n_chains, n_draws, n_params)``.
    """
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != len(param_names):
        raise InvalidInputError("chains must have shape (n_chains, n_draws, n_params)")
    rhat, per_chain, pooled, flags = {}, {}, {}, []
    for j, name in enumerate(param_names):
        r, degenerate = gelman_rubin(arr[:, :, j], split=split)
        rhat[name] = r
        if degenerate:
            flags.append(f"{name}: constant chains, R-hat set to 1")
        elif r > rhat_threshold:
            flags.append(f"{name}: R-hat {r:.5f} exceeds {rhat_threshold}")
        ess = [effective_sample_size(c)[0] for c in arr[:, :, j]]
        per_chain[name] = ess
        pooled[name] = float(np.sum(ess))
        if pooled[name] < min_ess:
            flags.append(f"{name}: pooled ESS {pooled[name]:.1f} below {min_ess}")
    return DiagnosticsReport(tuple(param_names), rhat, per_chain, pooled, flags, metadata or {})
