"""Adaptive SMC-ABC for a scalar parameter and a scalar summary statistic.

Each particle carries ``M`` replicate summaries. Weights follow the ratio of
replicates inside the new and old tolerance, the tolerance is chosen so the
ESS shrinks by a fixed factor, and particles move by a Gaussian random walk
accepted jointly with fresh replicates.

Random streams: iteration ``t`` uses ``SeedSequence([seed, t, 0])`` for
proposals, resampling and accept/reject, ``[seed, t, 1, i]`` for particle
``i``'s replicates (per-particle backends) and ``[seed, t, 2]`` for a whole
batch (vectorised backends). Results do not depend on the thread count.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .binding import BindingTable
from .lattice import Lattice, random_labels
from .samplers import sw_chain

logger = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-10


class DegenerateSystemError(RuntimeError):
    """Every particle weight vanished; the tolerance is too tight."""


# ---------------------------------------------------------------------------
# priors and pseudo-summary backends


@dataclass(frozen=True)
class UniformPrior:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("uniform prior needs lower < upper")

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x):
        return (np.asarray(x) >= self.lower) & (np.asarray(x) <= self.upper)

    def pdf(self, x):
        return np.where(self.contains(x), 1.0 / (self.upper - self.lower), 0.0)

    def sample(self, rng, size=None):
        return rng.uniform(self.lower, self.upper, size)


class SyntheticGenerator:
    """Gaussian pseudo-summaries from an interpolated binding table."""

    vectorized = True

    def __init__(self, table: BindingTable):
        self.table = table

    def draw_batch(self, betas: np.ndarray, m: int, rng) -> np.ndarray:
        mu, sd = self.table.query(np.asarray(betas, dtype=np.float64))
        return mu[:, None] + sd[:, None] * rng.standard_normal((len(betas), m))

    def draw(self, beta: float, m: int, rng) -> np.ndarray:
        return self.draw_batch(np.array([beta]), m, rng)[0]


class ModelGenerator:
    """Pseudo-summaries simulated from the Potts model by Swendsen-Wang.

    Each call starts a fresh chain from uniform labels, discards ``burn_in``
    steps, then records S(z) every ``thin`` steps.
    """

    vectorized = False

    def __init__(self, lattice: Lattice, burn_in: int = 50, thin: int = 10):
        if thin < 1 or burn_in < 0:
            raise ValueError("need thin >= 1 and burn_in >= 0")
        self.lattice = lattice
        self.burn_in = burn_in
        self.thin = thin

    def draw(self, beta: float, m: int, rng) -> np.ndarray:
        labels = random_labels(self.lattice, rng)
        sw_chain(labels, self.lattice.k, beta, self.burn_in, rng, record=False)
        _, stats = sw_chain(labels, self.lattice.k, beta, m * self.thin, rng)
        return stats[self.thin - 1 :: self.thin].astype(np.float64)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def draw_summaries(gen, betas: np.ndarray, m: int, seed: int, t: int, index=None, threads: int = 1) -> np.ndarray:
    """Replicate summaries for ``betas`` (rows follow ``index``, the particle ids)."""
    betas = np.asarray(betas, dtype=np.float64)
    if index is None:
        index = np.arange(betas.size)
    if betas.size == 0:
        return np.empty((0, m))
    if getattr(gen, "vectorized", False):
        return gen.draw_batch(betas, m, _stream(seed, t, 2))

    def one(j):
        return gen.draw(float(betas[j]), m, _stream(seed, t, 1, int(index[j])))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(betas.size)))
    else:
        rows = [one(j) for j in range(betas.size)]
    return np.vstack(rows)


# ---------------------------------------------------------------------------
# particle system


@dataclass
class SMCConfig:
    n_particles: int = 10_000
    n_replicates: int = 50
    alpha: float = 0.97
    ess_min: float | None = None
    proposal_scale: float = 2.0
    min_acceptance: float = 0.01
    max_iterations: int = 200
    min_rel_eps_change: float = 1e-3
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.n_particles < 1 or self.n_replicates < 1:
            raise ValueError("need at least one particle and one replicate")
        if self.ess_min is None:
            self.ess_min = self.n_particles / 2
        if not 0 < self.ess_min <= self.n_particles:
            raise ValueError("need 0 < ess_min <= n_particles")
        if self.proposal_scale <= 0:
            raise ValueError("proposal_scale must be positive")


@dataclass
class ParticleSystem:
    beta: np.ndarray
    weights: np.ndarray
    summaries: np.ndarray
    s_obs: float
    epsilon: float
    t: int = 0
    distances: np.ndarray = field(init=False, repr=False)
    # alive counts under the statistic the particles were last moved against
    prev_alive: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.set_observed(self.s_obs)

    @property
    def n(self) -> int:
        return self.beta.size

    @property
    def m(self) -> int:
        return self.summaries.shape[1]

    @property
    def ess(self) -> float:
        return ess(self.weights)

    def set_observed(self, s_obs: float) -> None:
        """Re-centre the distances on a new observed statistic, reusing the stored replicates.

        The next reweight divides by the alive counts under the old statistic,
        so particles that lost replicates to the shift are penalised.
        """
        if self.prev_alive is None and hasattr(self, "distances") and math.isfinite(self.epsilon):
            self.prev_alive = self.alive(self.epsilon)
        self.s_obs = float(s_obs)
        self.distances = np.abs(self.summaries - self.s_obs)

    def alive(self, epsilon: float) -> np.ndarray:
        return np.count_nonzero(self.distances < epsilon, axis=1)


def initialize(prior: UniformPrior, gen, s_obs: float, config: SMCConfig, rng=None) -> ParticleSystem:
    """Prior draws with ``M`` replicates each; uniform weights; epsilon just above every distance."""
    if rng is None:
        rng = _stream(config.seed, 0, 0)
    n = config.n_particles
    beta = prior.sample(rng, n)
    summaries = draw_summaries(gen, beta, config.n_replicates, config.seed, 0, threads=config.threads)
    system = ParticleSystem(beta, np.full(n, 1.0 / n), summaries, s_obs, math.inf)
    # strict inequality in the indicator: nudge past the largest distance
    system.epsilon = float(np.nextafter(system.distances.max(), np.inf))
    return system


def ess(weights) -> float:
    w = np.asarray(weights, dtype=np.float64)
    ss = float(np.dot(w, w))
    if ss == 0.0:
        raise DegenerateSystemError("all weights are zero")
    return 1.0 / ss


def reweight(system: ParticleSystem, epsilon_new: float) -> np.ndarray:
    """Normalised weights after moving the tolerance from ``system.epsilon`` to ``epsilon_new``."""
    num = system.alive(epsilon_new)
    den = system.prev_alive if system.prev_alive is not None else system.alive(system.epsilon)
    ratio = np.divide(num, den, out=np.zeros(system.n), where=den > 0)
    w = system.weights * ratio
    total = w.sum()
    if total <= 0:
        raise DegenerateSystemError(f"no particle survives epsilon={epsilon_new!r}")
    return w / total


def _ess_at(system: ParticleSystem, epsilon: float) -> float:
    try:
        return ess(reweight(system, epsilon))
    except DegenerateSystemError:
        return 0.0


def adapt_tolerance(system: ParticleSystem, alpha: float, rel_tol: float = 1e-6, max_steps: int = 100) -> float:
    """Bisect for the tolerance that brings the ESS down to ``alpha`` times its current value.

    ESS is piecewise constant in epsilon, so the bisection end point is
    snapped up to the top of its constant piece (the nearest replicate
    distance above it). If that leaves epsilon unchanged, step down to the
    next distance value provided some particle survives it.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    eps_cur = system.epsilon
    target = alpha * system.ess
    if _ess_at(system, eps_cur) < target:
        return eps_cur
    lo, hi = 0.0, eps_cur
    for _ in range(max_steps):
        if hi - lo < rel_tol * eps_cur:
            break
        mid = 0.5 * (lo + hi)
        if _ess_at(system, mid) >= target:
            hi = mid
        else:
            lo = mid
    d = system.distances[system.distances < eps_cur]
    above = d[d >= hi]
    eps_new = float(above.min()) if above.size else eps_cur
    if eps_new == eps_cur and d.size:
        below = float(d.max())
        if _ess_at(system, below) > 0:
            eps_new = below
    return eps_new


def resample_residual(system: ParticleSystem, rng) -> ParticleSystem:
    """Keep floor(N w_i) copies of each particle, fill the rest multinomially."""
    n = system.n
    expected = n * system.weights
    counts = np.floor(expected).astype(np.int64)
    rest = n - int(counts.sum())
    if rest > 0:
        resid = np.clip(expected - counts, 0.0, None)
        counts += rng.multinomial(rest, resid / resid.sum())
    idx = np.repeat(np.arange(n), counts)
    system.beta = system.beta[idx]
    system.summaries = system.summaries[idx]
    system.distances = system.distances[idx]
    system.weights = np.full(n, 1.0 / n)
    return system


def adapt_bandwidth(system: ParticleSystem, scale: float = 2.0) -> float:
    """Random-walk variance: ``scale`` times the weighted variance of beta."""
    w = system.weights
    mean = float(np.dot(w, system.beta))
    var = float(np.dot(w, (system.beta - mean) ** 2))
    return max(scale * var, BANDWIDTH_FLOOR)


def mutate(system: ParticleSystem, prior: UniformPrior, gen, sigma2: float, config: SMCConfig, rng=None) -> float:
    """One MH move per live particle at the current tolerance; returns the acceptance rate."""
    t = system.t
    if rng is None:
        rng = _stream(config.seed, t, 0)
    live = np.flatnonzero(system.weights > 0)
    prop = system.beta[live] + math.sqrt(sigma2) * rng.standard_normal(live.size)
    u = rng.random(live.size)
    inside = prior.contains(prop)
    cand = live[inside]
    new = draw_summaries(gen, prop[inside], system.m, config.seed, t, index=cand, threads=config.threads)
    new_alive = np.count_nonzero(np.abs(new - system.s_obs) < system.epsilon, axis=1)
    old_alive = system.alive(system.epsilon)[cand]
    prior_ratio = prior.pdf(prop[inside]) / prior.pdf(system.beta[cand])
    # symmetric random walk: proposal ratio is 1
    q_ratio = 1.0
    rho = new_alive / old_alive * prior_ratio * q_ratio
    accept = u[inside] < np.minimum(1.0, rho)
    take = cand[accept]
    system.beta[take] = prop[inside][accept]
    system.summaries[take] = new[accept]
    system.distances[take] = np.abs(new[accept] - system.s_obs)
    return float(accept.sum()) / max(live.size, 1)


# ---------------------------------------------------------------------------
# driver


@dataclass
class IterationRecord:
    t: int
    epsilon: float
    ess: float
    acceptance_rate: float
    resampled: bool
    sigma2: float
    s_obs: float


@dataclass
class FitTrace:
    records: list[IterationRecord]
    beta: np.ndarray
    weights: np.ndarray
    stop_reason: str
    elapsed: float = 0.0

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    @property
    def epsilon(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.records])

    def posterior_mean(self) -> float:
        return float(np.dot(self.weights, self.beta))

    def posterior_sd(self) -> float:
        m = self.posterior_mean()
        return math.sqrt(float(np.dot(self.weights, (self.beta - m) ** 2)))

    def credible_interval(self, level: float = 0.95) -> tuple[float, float]:
        a = (1 - level) / 2
        return weighted_quantile(self.beta, self.weights, a), weighted_quantile(self.beta, self.weights, 1 - a)


def weighted_quantile(x, w, q: float) -> float:
    order = np.argsort(x, kind="stable")
    xs = np.asarray(x)[order]
    cw = np.cumsum(np.asarray(w)[order])
    cw /= cw[-1]
    return float(xs[min(np.searchsorted(cw, q), xs.size - 1)])


def smc_iteration(system: ParticleSystem, prior: UniformPrior, gen, config: SMCConfig) -> IterationRecord:
    """Tolerance, reweight, optional resample, bandwidth, mutate."""
    system.t += 1
    rng = _stream(config.seed, system.t, 0)
    eps_new = adapt_tolerance(system, config.alpha)
    system.weights = reweight(system, eps_new)
    system.epsilon = eps_new
    system.prev_alive = None
    ess_t = system.ess
    resampled = ess_t < config.ess_min
    if resampled:
        resample_residual(system, rng)
    sigma2 = adapt_bandwidth(system, config.proposal_scale)
    acc = mutate(system, prior, gen, sigma2, config, rng)
    return IterationRecord(system.t, eps_new, ess_t, acc, resampled, sigma2, system.s_obs)


def stop_reason(records: list[IterationRecord], prev_eps: float, config: SMCConfig) -> str | None:
    last = records[-1]
    if last.acceptance_rate < config.min_acceptance:
        return "acceptance"
    if math.isfinite(prev_eps) and prev_eps > 0 and (prev_eps - last.epsilon) / prev_eps < config.min_rel_eps_change:
        return "epsilon"
    if last.t >= config.max_iterations:
        return "max_iterations"
    return None


def run(prior: UniformPrior, gen, s_obs: float, config: SMCConfig, rng=None) -> FitTrace:
    """SMC-ABC against a fixed observed statistic."""
    start = time.perf_counter()
    system = initialize(prior, gen, s_obs, config, rng)
    records: list[IterationRecord] = []
    reason = None
    while reason is None:
        prev = system.epsilon
        records.append(smc_iteration(system, prior, gen, config))
        reason = stop_reason(records, prev, config)
        logger.debug("t=%d eps=%.6g ess=%.1f acc=%.3f", system.t, system.epsilon, records[-1].ess, records[-1].acceptance_rate)
    return FitTrace(records, system.beta.copy(), system.weights.copy(), reason, time.perf_counter() - start)
