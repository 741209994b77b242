"""Simulation from the Potts prior p(z | beta) and exact moments on tiny lattices."""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import kernels
from .lattice import LabelImage, Lattice, edge_count, neighbors, random_labels

ENUMERATION_BUDGET = 2**26

# cap on uniforms generated per kernel call
_BLOCK_FLOATS = 1 << 22


class OracleInfeasibleError(ValueError):
    """Raised when exhaustive enumeration would exceed ``ENUMERATION_BUDGET``."""


@dataclass(frozen=True)
class SimulationConfig:
    total_iterations: int = 1000
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be positive")
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("need 0 <= burn_in < total_iterations")

    @property
    def retained(self) -> int:
        return self.total_iterations - self.burn_in


@dataclass(frozen=True)
class MomentPair:
    mean: float
    sd: float


def gibbs_site_distribution(z: LabelImage, i: int, beta: float) -> np.ndarray:
    """Full conditional of pixel ``i`` given its neighbours."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    k = z.lattice.k
    flat = z.labels.ravel()
    agree = np.zeros(k)
    for j in neighbors(z.lattice, i):
        agree[flat[j] - 1] += 1
    logits = beta * agree
    w = np.exp(logits - logits.max())
    return w / w.sum()


def _run_blocks(kernel, labels, k, beta, steps, per_step, rng, record):
    stats = np.zeros(steps if record else 0, dtype=np.int64)
    block = max(1, _BLOCK_FLOATS // per_step)
    done = 0
    while done < steps:
        b = min(block, steps - done)
        u = rng.random((b, per_step))
        out = stats[done:done + b] if record else stats
        kernel(labels, k, float(beta), u, out)
        done += b
    return labels, stats


def sw_chain(labels: np.ndarray, k: int, beta: float, steps: int, rng, record: bool = True):
    """Run ``steps`` Swendsen-Wang updates in place on a label array.

    Returns ``(labels, stats)`` where ``stats[t]`` is S(z) after step ``t``
    (empty when ``record`` is false).
    """
    rows, cols = labels.shape
    per_step = kernels.sw_uniforms_per_step(rows, cols)
    return _run_blocks(kernels.sw_block, labels, k, beta, steps, per_step, rng, record)


def gibbs_chain(labels: np.ndarray, k: int, beta: float, sweeps: int, rng, record: bool = False):
    """Run ``sweeps`` raster-scan Gibbs sweeps in place on a label array."""
    return _run_blocks(kernels.gibbs_block, labels, k, beta, sweeps, labels.size, rng, record)


def gibbs_sweep(z: LabelImage, beta: float, rng) -> LabelImage:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    labels = np.array(z.labels)
    gibbs_chain(labels, z.lattice.k, beta, 1, rng)
    return z.with_labels(labels)


def swendsen_wang_step(z: LabelImage, beta: float, rng) -> LabelImage:
    """One cluster update: bonds on like edges open with probability 1 - exp(-beta)."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    labels = np.array(z.labels)
    sw_chain(labels, z.lattice.k, beta, 1, rng, record=False)
    return z.with_labels(labels)


def simulate_summary_trace(lattice: Lattice, beta: float, config: SimulationConfig, rng=None) -> np.ndarray:
    """Post burn-in S(z) trace of a Swendsen-Wang chain started from uniform labels.

    With ``rng=None`` the chain is seeded from ``config.seed``.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    labels = random_labels(lattice, rng)
    sw_chain(labels, lattice.k, beta, config.burn_in, rng, record=False)
    _, trace = sw_chain(labels, lattice.k, beta, config.retained, rng)
    return trace


def simulate_field(lattice: Lattice, beta: float, steps: int, rng) -> LabelImage:
    """Draw a label image by running ``steps`` Swendsen-Wang updates from uniform labels."""
    labels = random_labels(lattice, rng)
    sw_chain(labels, lattice.k, beta, steps, rng, record=False)
    return LabelImage(lattice, labels)


# ---------------------------------------------------------------------------
# exact oracle


@functools.lru_cache(maxsize=32)
def _counts_cached(rows: int, cols: int, k: int) -> np.ndarray:
    counts = kernels.enumerate_counts(rows, cols, k)
    counts.flags.writeable = False
    return counts


def statistic_counts(lattice: Lattice) -> np.ndarray:
    """Number of label configurations with each value of S, by full enumeration.

    ``counts[s]`` is the number of ``z`` in ``{1..k}^n`` with ``S(z) = s``.
    """
    if lattice.n * math.log2(lattice.k) > math.log2(ENUMERATION_BUDGET) + 1e-12:
        raise OracleInfeasibleError(
            f"oracle infeasible: {lattice.k}^{lattice.n} states exceeds the enumeration budget of 2^26"
        )
    return _counts_cached(lattice.rows, lattice.cols, lattice.k)


def _log_weights(lattice: Lattice, beta: float):
    counts = statistic_counts(lattice)
    s = np.arange(counts.size, dtype=np.float64)
    mask = counts > 0
    logw = np.full(counts.size, -np.inf)
    logw[mask] = np.log(counts[mask].astype(np.float64)) + beta * s[mask]
    return s, logw


def exact_log_partition(lattice: Lattice, beta: float) -> float:
    """log C(beta), the log normalising constant of p(z | beta)."""
    _, logw = _log_weights(lattice, beta)
    m = logw.max()
    return float(m + np.log(np.exp(logw - m).sum()))


def exact_moments(lattice: Lattice, beta: float) -> MomentPair:
    """Mean and standard deviation of S(z) under p(z | beta), by enumeration."""
    counts = statistic_counts(lattice)
    s = np.arange(counts.size, dtype=np.float64)
    if beta == 0:
        # integer arithmetic keeps the binomial case exact
        c = [int(v) for v in counts]
        total = sum(c)
        m1 = Fraction(sum(i * v for i, v in enumerate(c)), total)
        m2 = Fraction(sum(i * i * v for i, v in enumerate(c)), total)
        return MomentPair(float(m1), math.sqrt(float(m2 - m1 * m1)))
    _, logw = _log_weights(lattice, beta)
    p = np.exp(logw - logw.max())
    p /= p.sum()
    mean = float((p * s).sum())
    var = float((p * (s - mean) ** 2).sum())
    return MomentPair(mean, math.sqrt(max(var, 0.0)))


def binomial_moments_beta0(lattice: Lattice) -> MomentPair:
    """Closed-form moments of S at beta = 0 (Binomial with p = 1/k)."""
    e = edge_count(lattice)
    k = lattice.k
    return MomentPair(float(Fraction(e, k)), math.sqrt(float(Fraction(e * (k - 1), k * k))))
