"""Hidden Potts model with additive Gaussian noise.

A single auxiliary chain over the latent labels and the noise parameters
runs alongside the SMC-ABC particles. After each SMC iteration the chain is
pushed forward with beta values drawn from the current particle weights,
and its S(z) becomes the observed statistic for the next iteration.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .lattice import LabelImage, Lattice, ObservedImage, edge_count, neighbors, sufficient_statistic
from .smc import (
    DegenerateSystemError,
    IterationRecord,
    ParticleSystem,
    SMCConfig,
    UniformPrior,
    _stream,
    initialize,
    smc_iteration,
    stop_reason,
    weighted_quantile,
)

logger = logging.getLogger(__name__)

VAR_FLOOR_FRACTION = 1e-6
# S(z)/|E| above this means the chain sits deep in the ordered phase
ORDERED_FRACTION = 0.9


@dataclass
class NoiseParams:
    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64)
        self.sigma2 = np.array(self.sigma2, dtype=np.float64)
        if self.mu.shape != self.sigma2.shape:
            raise ValueError("mu and sigma2 must have one entry per label")
        if np.any(self.sigma2 <= 0):
            raise ValueError("noise variances must be positive")

    @property
    def k(self) -> int:
        return self.mu.size

    def log_density(self, y):
        """``log N(y; mu_j, sigma2_j)`` with a trailing axis over labels."""
        y = np.asarray(y, dtype=np.float64)[..., None]
        return -0.5 * np.log(2 * np.pi * self.sigma2) - (y - self.mu) ** 2 / (2 * self.sigma2)


@dataclass(frozen=True)
class NoisePriors:
    """Normal(m0, v0) on each mean, InverseGamma(a0, b0) on each variance."""

    m0: float = 0.0
    v0: float = 100.0**2
    a0: float = 1.0
    b0: float = 0.01

    def __post_init__(self):
        if self.v0 <= 0 or self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("need v0, a0, b0 > 0")


def component_stats(labels: np.ndarray, y: np.ndarray, k: int):
    """Per-label count, sum and sum of squares of ``y``."""
    idx = labels.ravel() - 1
    yv = y.ravel()
    n = np.bincount(idx, minlength=k)
    s1 = np.bincount(idx, weights=yv, minlength=k)
    s2 = np.bincount(idx, weights=yv * yv, minlength=k)
    return n, s1, s2


@dataclass
class AuxChainState:
    lattice: Lattice
    labels: np.ndarray
    noise: NoiseParams
    s_current: int
    counts: np.ndarray
    sums: np.ndarray
    sumsq: np.ndarray
    var_floor: float
    warnings: list = field(default_factory=list)

    @classmethod
    def from_labels(cls, lattice: Lattice, labels, y: np.ndarray, noise: NoiseParams, var_floor: float):
        labels = np.array(labels, dtype=np.int64).reshape(lattice.shape)
        n, s1, s2 = component_stats(labels, y, lattice.k)
        return cls(lattice, labels, noise, sufficient_statistic(labels), n, s1, s2, var_floor)

    @property
    def z(self) -> LabelImage:
        return LabelImage(self.lattice, self.labels)

    def component_means(self) -> np.ndarray:
        return np.divide(self.sums, self.counts, out=np.full(self.lattice.k, np.nan), where=self.counts > 0)

    def component_vars(self) -> np.ndarray:
        m = self.component_means()
        v = np.divide(self.sumsq, self.counts, out=np.full(self.lattice.k, np.nan), where=self.counts > 0)
        return v - m * m


def posterior_label_distribution(y_i: float, z: LabelImage, i: int, noise: NoiseParams, beta: float) -> np.ndarray:
    """Conditional of label ``i`` given its neighbours, its pixel value and the noise parameters."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    flat = z.labels.ravel()
    agree = np.zeros(noise.k)
    for j in neighbors(z.lattice, i):
        agree[flat[j] - 1] += 1
    lp = noise.log_density(y_i) + beta * agree
    w = np.exp(lp - lp.max())
    return w / w.sum()


def chequerboard_sweep(state: AuxChainState, y: ObservedImage, beta: float, rng) -> AuxChainState:
    """Resample all pixels with (row + col) even, then all with (row + col) odd."""
    yv = y.values
    noise = state.noise
    u = rng.random((1, state.lattice.n))
    log_norm = -0.5 * np.log(2 * np.pi * noise.sigma2)
    inv2var = 1.0 / (2 * noise.sigma2)
    _, delta = kernels.cheq_block(state.labels, yv, log_norm, noise.mu, inv2var, float(beta), u)
    state.s_current += int(delta)
    state.counts, state.sums, state.sumsq = component_stats(state.labels, yv, state.lattice.k)
    return state


def update_noise_params(state: AuxChainState, y: ObservedImage, priors: NoisePriors, rng) -> AuxChainState:
    """Semi-conjugate Gibbs update: each variance given its mean, then each mean given its variance."""
    k = state.lattice.k
    yv = y.values.ravel()
    idx = state.labels.ravel() - 1
    mu = state.noise.mu.copy()
    resid = np.bincount(idx, weights=(yv - mu[idx]) ** 2, minlength=k)
    n = state.counts
    shape = priors.a0 + n / 2.0
    rate = priors.b0 + 0.5 * resid
    sigma2 = rate / rng.gamma(shape, 1.0, size=k)
    sigma2 = np.maximum(sigma2, state.var_floor)
    prec = 1.0 / priors.v0 + n / sigma2
    mean = (priors.m0 / priors.v0 + state.sums / sigma2) / prec
    mu = mean + rng.standard_normal(k) / np.sqrt(prec)
    state.noise = NoiseParams(mu, sigma2)
    return state


def refresh_chain(
    state: AuxChainState,
    y: ObservedImage,
    system: ParticleSystem,
    sweeps: int,
    rng,
    priors: NoisePriors | None = None,
) -> AuxChainState:
    """Draw ``sweeps`` betas from the weighted particles, one chequerboard sweep each, then one noise update."""
    if sweeps > 0:
        betas = system.beta[rng.choice(system.n, size=sweeps, p=system.weights)]
        for b in betas:
            chequerboard_sweep(state, y, float(b), rng)
    if priors is not None:
        update_noise_params(state, y, priors, rng)
    return state


def _var_floor(y: np.ndarray, warnings: list) -> float:
    v = float(np.var(y))
    if v > 0:
        return VAR_FLOOR_FRACTION * v
    warnings.append("observed image has zero variance; using absolute variance floor 1e-6")
    return VAR_FLOOR_FRACTION


def init_at_beta0(y: ObservedImage, k: int, priors: NoisePriors, init_sweeps: int, rng) -> AuxChainState:
    """Start the auxiliary chain as an independent Gaussian mixture (beta = 0).

    Components come from a k-quantile split of the pixel values, ordered by
    mean. Labels are then drawn from the beta = 0 responsibilities and
    ``init_sweeps`` rounds of label sweep + noise update follow.
    """
    if k < 2:
        raise ValueError("need k >= 2")
    lattice = Lattice(y.lattice.rows, y.lattice.cols, k)
    yv = y.values
    warnings: list = []
    floor = _var_floor(yv, warnings)
    order = np.argsort(yv.ravel(), kind="stable")
    groups = np.array_split(order, k)
    labels = np.empty(lattice.n, dtype=np.int64)
    mu = np.empty(k)
    var = np.empty(k)
    flat = yv.ravel()
    for j, g in enumerate(groups):
        labels[g] = j + 1
        mu[j] = flat[g].mean() if g.size else flat.mean()
        var[j] = max(float(flat[g].var()) if g.size > 1 else 0.0, floor)
    state = AuxChainState.from_labels(lattice, labels, yv, NoiseParams(mu, var), floor)
    state.warnings = warnings
    for w in warnings:
        logger.warning(w)
    chequerboard_sweep(state, y, 0.0, rng)
    for _ in range(init_sweeps):
        update_noise_params(state, y, priors, rng)
        chequerboard_sweep(state, y, 0.0, rng)
    return state


@dataclass
class FitResult:
    beta: np.ndarray
    weights: np.ndarray
    records: list[IterationRecord]
    noise_trace: list[tuple[int, np.ndarray, np.ndarray]]
    s_trace: list[int]
    labels: LabelImage
    timings: dict
    stop_reason: str
    warnings: list = field(default_factory=list)

    @property
    def n_iterations(self) -> int:
        return len(self.records)

    def posterior_mean(self) -> float:
        return float(np.dot(self.weights, self.beta))

    def posterior_sd(self) -> float:
        m = self.posterior_mean()
        return math.sqrt(float(np.dot(self.weights, (self.beta - m) ** 2)))

    def credible_interval(self, level: float = 0.95) -> tuple[float, float]:
        a = (1 - level) / 2
        return weighted_quantile(self.beta, self.weights, a), weighted_quantile(self.beta, self.weights, 1 - a)

    def noise_means(self, burn: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and sd of each component mean over the noise trace."""
        mus = np.array([m for _, m, _ in self.noise_trace[burn:]])
        return mus.mean(axis=0), mus.std(axis=0)


def fit_hidden_potts(
    y: ObservedImage,
    k: int,
    prior: UniformPrior,
    noise_priors: NoisePriors,
    gen,
    config: SMCConfig,
    sweeps: int = 100,
    init_sweeps: int = 20,
) -> FitResult:
    """SMC-ABC for beta coupled with one auxiliary chain over labels and noise parameters."""
    lattice = Lattice(y.lattice.rows, y.lattice.cols, k)
    table = getattr(gen, "table", None)
    if table is not None:
        table.check_compatible(lattice)
    chain_rng = _stream(config.seed, 0, 3)
    timings = {"init": 0.0, "smc": 0.0, "chain": 0.0}

    t0 = time.perf_counter()
    state = init_at_beta0(y, k, noise_priors, init_sweeps, chain_rng)
    s_trace = [state.s_current]
    noise_trace = [(0, state.noise.mu.copy(), state.noise.sigma2.copy())]
    timings["init"] += time.perf_counter() - t0

    t0 = time.perf_counter()
    system = initialize(prior, gen, state.s_current, config)
    timings["smc"] += time.perf_counter() - t0

    n_edges = edge_count(lattice)
    records: list[IterationRecord] = []
    reason = None
    while reason is None:
        prev = system.epsilon
        t0 = time.perf_counter()
        try:
            records.append(smc_iteration(system, prior, gen, config))
        except DegenerateSystemError as exc:
            # the moving target left no particle inside the tolerance
            state.warnings.append(f"iteration {system.t}: {exc}")
            logger.warning("stopping: %s", exc)
            system.t -= 1
            timings["smc"] += time.perf_counter() - t0
            reason = "degenerate"
            break
        timings["smc"] += time.perf_counter() - t0

        t0 = time.perf_counter()
        rng = _stream(config.seed, system.t, 3)
        refresh_chain(state, y, system, sweeps, rng, noise_priors)
        system.set_observed(state.s_current)
        timings["chain"] += time.perf_counter() - t0

        s_trace.append(state.s_current)
        noise_trace.append((system.t, state.noise.mu.copy(), state.noise.sigma2.copy()))
        reason = stop_reason(records, prev, config)

    if s_trace[-1] / max(n_edges, 1) > ORDERED_FRACTION:
        state.warnings.append("auxiliary chain S(z) ended above the critical plateau; it may be stuck in the ordered phase")
    return FitResult(
        beta=system.beta.copy(),
        weights=system.weights.copy(),
        records=records,
        noise_trace=noise_trace,
        s_trace=s_trace,
        labels=state.z,
        timings=timings,
        stop_reason=reason,
        warnings=list(state.warnings),
    )
