"""Approximate exchange algorithm for beta, the MCMC baseline.

The auxiliary field is drawn with a fixed number of raster Gibbs sweeps from
uniform labels instead of a perfect sample, so the normalising constants
cancel only approximately.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .hidden import NoisePriors, chequerboard_sweep, init_at_beta0, update_noise_params
from .lattice import LabelImage, Lattice, ObservedImage, random_labels, sufficient_statistic
from .samplers import exact_log_partition, gibbs_chain
from .smc import UniformPrior


@dataclass(frozen=True)
class ExchangeConfig:
    iterations: int = 100_000
    burn_in: int = 5_000
    proposal_sd: float = 0.1
    aux_gibbs_sweeps: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.proposal_sd <= 0 or self.aux_gibbs_sweeps < 1:
            raise ValueError("need proposal_sd > 0 and aux_gibbs_sweeps >= 1")


@dataclass
class ChainResult:
    trace: np.ndarray
    acceptance_rate: float
    ess: float
    noise_trace: list = field(default_factory=list)

    def posterior_mean(self) -> float:
        return float(self.trace.mean())

    def mc_standard_error(self) -> float:
        return float(self.trace.std(ddof=1) / math.sqrt(self.ess))


def exchange_log_ratio(beta: float, beta_prop: float, s_obs: float, s_aux: float, prior: UniformPrior) -> float:
    """Log acceptance ratio; the normalising constants cancel."""
    p_new = float(prior.pdf(beta_prop))
    if p_new == 0.0:
        return -math.inf
    return math.log(p_new) - math.log(float(prior.pdf(beta))) + (beta_prop - beta) * (s_obs - s_aux)


def exchange_step(beta: float, s_obs: float, lattice: Lattice, prior: UniformPrior, config: ExchangeConfig, rng):
    """One exchange move. Returns ``(beta_next, accepted)``."""
    beta_prop = beta + config.proposal_sd * rng.standard_normal()
    u = rng.random()
    if not prior.contains(beta_prop):
        return beta, False
    labels = random_labels(lattice, rng)
    gibbs_chain(labels, lattice.k, beta_prop, config.aux_gibbs_sweeps, rng)
    s_aux = sufficient_statistic(labels)
    if math.log(u) < exchange_log_ratio(beta, beta_prop, s_obs, s_aux, prior):
        return beta_prop, True
    return beta, False


def run_exchange(z_obs: LabelImage, prior: UniformPrior, config: ExchangeConfig, rng=None) -> ChainResult:
    """Exchange chain for a fully observed label image, started at the prior midpoint."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    s_obs = sufficient_statistic(z_obs)
    beta = prior.midpoint
    kept = np.empty(config.iterations - config.burn_in)
    n_acc = 0
    for it in range(config.iterations):
        beta, acc = exchange_step(beta, s_obs, z_obs.lattice, prior, config, rng)
        n_acc += acc
        if it >= config.burn_in:
            kept[it - config.burn_in] = beta
    return ChainResult(kept, n_acc / config.iterations, autocorr_ess(kept))


def run_exchange_hidden(
    y: ObservedImage,
    k: int,
    prior: UniformPrior,
    noise_priors: NoisePriors,
    config: ExchangeConfig,
    init_sweeps: int = 20,
    rng=None,
) -> ChainResult:
    """Exchange moves inside data augmentation: per iteration one exchange step
    on the current labels, then one chequerboard sweep and one noise update."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    state = init_at_beta0(y, k, noise_priors, init_sweeps, rng)
    lattice = state.lattice
    beta = prior.midpoint
    kept = np.empty(config.iterations - config.burn_in)
    noise_trace = []
    n_acc = 0
    for it in range(config.iterations):
        beta, acc = exchange_step(beta, state.s_current, lattice, prior, config, rng)
        n_acc += acc
        chequerboard_sweep(state, y, beta, rng)
        update_noise_params(state, y, noise_priors, rng)
        if it >= config.burn_in:
            kept[it - config.burn_in] = beta
            noise_trace.append((it, state.noise.mu.copy(), state.noise.sigma2.copy()))
    return ChainResult(kept, n_acc / config.iterations, autocorr_ess(kept), noise_trace)


def autocorr_ess(trace) -> float:
    """Effective sample size by the initial positive sequence estimator, clipped to [1, T]."""
    x = np.asarray(trace, dtype=np.float64)
    n = x.size
    if n < 10:
        raise ValueError("autocorr_ess needs at least 10 samples")
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var <= 0:
        return 1.0
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    rho = acov / acov[0]
    tau = -1.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    return float(min(max(n / tau, 1.0), n))


def exact_beta_posterior(lattice: Lattice, s_obs: int, prior: UniformPrior, points: int = 4001):
    """Posterior of beta given S(z) = s_obs on a grid, with exact normalising constants.

    Returns ``(grid, density)``; only feasible where full enumeration is.
    """
    grid = np.linspace(prior.lower, prior.upper, points)
    logp = np.array([b * s_obs - exact_log_partition(lattice, b) for b in grid])
    dens = np.exp(logp - logp.max())
    dens /= trapezoid(dens, grid)
    return grid, dens
