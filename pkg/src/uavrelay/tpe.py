"""Black-box maximizer: Bayesian optimization with a tree-structured Parzen
estimator over box-bounded continuous spaces.

The sampler splits past trials into a good set (top fraction by value) and a
bad set, fits per-dimension Parzen densities l(x) and g(x) from truncated
Gaussian kernels plus a uniform prior kernel, draws candidates from l and
returns the candidate maximizing the density ratio l/g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dim {self.name}: lower must be < upper")


@dataclass
class SearchSpace:
    dims: list

    def __post_init__(self):
        if not self.dims:
            raise ValueError("search space needs at least one dimension")

    @property
    def lower(self) -> np.ndarray:
        return np.array([d.lower for d in self.dims])

    @property
    def upper(self) -> np.ndarray:
        return np.array([d.upper for d in self.dims])

    @property
    def n_dims(self) -> int:
        return len(self.dims)

    @staticmethod
    def box(bounds) -> "SearchSpace":
        return SearchSpace([Dim(f"x{i}", lo, hi) for i, (lo, hi) in enumerate(bounds)])


@dataclass
class TrialRecord:
    params: np.ndarray
    value: float | None
    index: int
    failed: bool = False


@dataclass
class TpeConfig:
    n_startup: int = 10
    gamma_split: float = 0.25
    n_candidates: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.n_startup < 1:
            raise ValueError("n_startup must be >= 1")
        if not (0.0 < self.gamma_split < 1.0):
            raise ValueError("gamma_split must be in (0, 1)")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


class _Parzen1D:
    """Mixture of truncated Gaussians (one per observation) + uniform prior.

    Kernel bandwidth is the distance to the farther adjacent neighbor in
    sorted order (bounds act as outermost neighbors), floored at
    width / min(100, n) and capped at the full width.
    """

    def __init__(self, mus, lower: float, upper: float):
        mus = np.sort(np.asarray(mus, dtype=np.float64))
        n = len(mus)
        width = upper - lower
        ext = np.concatenate([[lower], mus, [upper]])
        left = ext[1:-1] - ext[:-2]
        right = ext[2:] - ext[1:-1]
        bw = np.maximum(left, right)
        bw = np.clip(bw, width / min(100, max(n, 1)), width)
        self.mus, self.sigmas = mus, bw
        self.lower, self.upper = lower, upper
        # truncation mass of each Gaussian kernel inside the box
        self._cdf_lo = ndtr((lower - mus) / bw)
        self._cdf_hi = ndtr((upper - mus) / bw)
        self._mass = np.maximum(self._cdf_hi - self._cdf_lo, 1e-300)

    def pdf(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        z = (x[:, None] - self.mus[None, :]) / self.sigmas[None, :]
        kern = np.exp(-0.5 * z * z) / (self.sigmas[None, :] * _SQRT2PI)
        kern = kern / self._mass[None, :]
        inside = (x >= self.lower) & (x <= self.upper)
        width = self.upper - self.lower
        total = (kern.sum(axis=1) + 1.0 / width) / (len(self.mus) + 1)
        return np.where(inside, total, 0.0)

    def sample(self, rng, size: int) -> np.ndarray:
        n = len(self.mus)
        kidx = rng.integers(0, n + 1, size=size)
        u = rng.random(size)
        out = np.empty(size)
        uniform = kidx == n
        out[uniform] = self.lower + u[uniform] * (self.upper - self.lower)
        g = ~uniform
        if g.any():
            k = kidx[g]
            p = self._cdf_lo[k] + u[g] * (self._cdf_hi[k] - self._cdf_lo[k])
            out[g] = self.mus[k] + self.sigmas[k] * ndtri(np.clip(p, 1e-15, 1 - 1e-15))
        return np.clip(out, self.lower, self.upper)


def _usable(history):
    return [t for t in history
            if not t.failed and t.value is not None and np.isfinite(t.value)]


def suggest(history, space: SearchSpace, config: TpeConfig, rng) -> np.ndarray:
    """Next point to evaluate given past trials (maximization convention)."""
    ok = _usable(history)
    lo, hi = space.lower, space.upper
    if len(ok) < config.n_startup:
        return rng.uniform(lo, hi)
    values = np.array([t.value for t in ok])
    if np.all(values == values[0]):
        # zero-variance history carries no ranking signal
        return rng.uniform(lo, hi)
    n_good = math.ceil(config.gamma_split * len(ok))
    order = np.argsort(-values, kind="stable")
    good = [ok[i] for i in order[:n_good]]
    bad = [ok[i] for i in order[n_good:]]
    if not bad:
        return rng.uniform(lo, hi)
    cand = np.empty((config.n_candidates, space.n_dims))
    score = np.zeros(config.n_candidates)
    for d in range(space.n_dims):
        l_est = _Parzen1D([t.params[d] for t in good], lo[d], hi[d])
        g_est = _Parzen1D([t.params[d] for t in bad], lo[d], hi[d])
        xs = l_est.sample(rng, config.n_candidates)
        cand[:, d] = xs
        score += np.log(np.maximum(l_est.pdf(xs), 1e-300))
        score -= np.log(np.maximum(g_est.pdf(xs), 1e-300))
    return cand[int(np.argmax(score))].copy()


@dataclass
class TpeResult:
    best_params: np.ndarray
    best_value: float
    history: list = field(default_factory=list)


def optimize(f, space: SearchSpace, budget: int, config: TpeConfig) -> TpeResult:
    """Sequential TPE maximization of a black-box function.

    Failed evaluations (exceptions or non-finite values) are recorded as
    failed trials and excluded from the density fits. The returned best is
    the incumbent over all successful trials.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    rng = np.random.default_rng(config.seed)
    history = []
    best_p, best_v = None, -np.inf
    for i in range(budget):
        params = suggest(history, space, config, rng)
        failed = False
        try:
            value = float(f(params))
            if not np.isfinite(value):
                failed, value = True, None
        except Exception:
            failed, value = True, None
        history.append(TrialRecord(params, value, i, failed))
        if not failed and value > best_v:
            best_p, best_v = params, value
    return TpeResult(best_p, best_v, history)
