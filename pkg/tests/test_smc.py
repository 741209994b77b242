import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from pottsabc.binding import BindingTable
from pottsabc.lattice import Lattice
from pottsabc.smc import (
    BANDWIDTH_FLOOR,
    DegenerateSystemError,
    ModelGenerator,
    ParticleSystem,
    SMCConfig,
    SyntheticGenerator,
    UniformPrior,
    adapt_bandwidth,
    adapt_tolerance,
    draw_summaries,
    ess,
    initialize,
    mutate,
    resample_residual,
    reweight,
    run,
    weighted_quantile,
)


def make_system(distances, weights=None, eps=math.inf, beta=None, s_obs=0.0):
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, float)
    b = np.linspace(0.1, 0.9, n) if beta is None else np.asarray(beta, float)
    return ParticleSystem(b, w, s_obs + d, s_obs, eps)


def linear_table(lo=0.0, hi=2.0, e=1984, sd=5.0):
    beta = np.linspace(lo, hi, 201)
    mu = e / 3 + (e - e / 3) * beta / hi
    return BindingTable(beta, mu, np.full(beta.size, sd), {"rows": 32, "cols": 32, "k": 3})


class FixedGenerator:
    """Returns the same replicate row for every beta."""

    vectorized = True

    def __init__(self, row):
        self.row = np.asarray(row, float)

    def draw_batch(self, betas, m, rng):
        return np.tile(self.row[:m], (len(betas), 1))


class TestESS:
    def test_examples(self):
        assert ess(np.full(100, 0.01)) == pytest.approx(100)
        assert ess([1.0, 0, 0]) == 1
        assert ess([0.5, 0.25, 0.25]) == pytest.approx(8 / 3, rel=1e-15)

    def test_zero_weights(self):
        with pytest.raises(DegenerateSystemError):
            ess([0.0, 0.0])

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_bounds(self, raw):
        w = np.asarray(raw)
        assume(w.sum() > 1e-6)
        w = w / w.sum()
        assert 1 - 1e-9 <= ess(w) <= w.size + 1e-9


class TestReweight:
    def test_hand_example(self):
        s = make_system([[0.1, 0.2, 0.3, 0.9], [0.5, 0.6, 0.7, 0.8]], eps=1.0)
        assert reweight(s, 0.4).tolist() == [1.0, 0.0]

    def test_same_epsilon_keeps_weights(self):
        s = make_system([[0.1, 0.5], [0.2, 0.3], [0.4, 0.1]], weights=[0.2, 0.3, 0.5], eps=0.45)
        assert np.allclose(reweight(s, 0.45), [0.2, 0.3, 0.5])

    def test_no_survivor(self):
        s = make_system([[0.5], [0.6]], eps=1.0)
        with pytest.raises(DegenerateSystemError):
            reweight(s, 0.1)

    def test_moved_statistic_divides_by_old_counts(self):
        # replicates at 1,2,3,4 and 1,1,5,5; eps 2.5 around s=2 keeps 4 and 2
        s = ParticleSystem(np.array([0.3, 0.6]), np.array([0.5, 0.5]),
                           np.array([[1.0, 2, 3, 4], [1, 1, 5, 5]]), 2.0, 2.5)
        s.set_observed(4.0)
        # around s=4 at the same eps: 3 and 2 survive, ratios 3/4 and 2/2
        w = reweight(s, 2.5)
        assert np.allclose(w, np.array([0.75, 1.0]) / 1.75, rtol=1e-15)
        s.set_observed(5.0)
        assert s.prev_alive.tolist() == [4, 2]

    @given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
    def test_normalised(self, seed, frac):
        rng = np.random.default_rng(seed)
        s = make_system(rng.uniform(0, 1, (20, 5)), eps=1.0)
        eps = frac * float(s.distances.max())
        try:
            w = reweight(s, eps)
        except DegenerateSystemError:
            return
        assert abs(w.sum() - 1) < 1e-10
        assert np.all(w[s.alive(eps) == 0] == 0)


def scan_oracle(system, alpha):
    """Exhaustive search over the finitely many distinct tolerances."""
    eps_cur = system.epsilon
    target = alpha * system.ess
    d = np.unique(system.distances[system.distances < eps_cur])
    cands = list(d) + [eps_cur]

    def ess_at(e):
        try:
            return ess(reweight(system, e))
        except DegenerateSystemError:
            return 0.0

    values = [ess_at(c) for c in cands]
    if values[-1] < target:
        return eps_cur, values
    best = min(c for c, v in zip(cands, values) if v >= target)
    if best == eps_cur and d.size and ess_at(d[-1]) > 0:
        best = float(d[-1])
    return best, values


def _ess_at(system, eps):
    try:
        return ess(reweight(system, eps))
    except DegenerateSystemError:
        return 0.0


def constructed_systems():
    """Every 3-particle system whose 2 replicate distances come from {0.5, 1, ..., 2.5},
    under uniform and skewed weights and four alpha values."""
    values = [0.5, 1.0, 1.5, 2.0, 2.5]
    rows = list(itertools.combinations_with_replacement(values, 2))
    for trio in itertools.combinations_with_replacement(range(len(rows)), 3):
        d = np.array([rows[i] for i in trio])
        for w in ([1 / 3] * 3, [0.6, 0.3, 0.1]):
            for alpha in (0.5, 0.8, 0.9, 0.97):
                yield make_system(d, weights=w, eps=float(np.nextafter(d.max(), np.inf))), alpha


def crossing_contract(system, alpha):
    """The returned tolerance is a cell top where the ESS crosses the target from below,
    or the documented fallbacks when no such crossing lies under the current tolerance."""
    eps_cur = system.epsilon
    target = alpha * system.ess
    r = adapt_tolerance(system, alpha)
    if r > eps_cur:
        return False
    if _ess_at(system, eps_cur) < target:
        return r == eps_cur
    below = system.distances[system.distances < r]
    lower = _ess_at(system, below.max()) if below.size else 0.0
    if r < eps_cur and _ess_at(system, r) >= target and lower < target:
        return True
    d = system.distances[system.distances < eps_cur]
    if d.size and _ess_at(system, d.max()) > 0:
        return r == d.max()
    return r == eps_cur


class TestAdaptTolerance:
    def test_constructed_example(self):
        # particle distance sets {1,2,3}, {2,4,6}, {5,7,9} at eps=10
        s = make_system([[1, 2, 3], [2, 4, 6], [5, 7, 9]], eps=10.0)
        got = adapt_tolerance(s, 0.9)
        assert got == scan_oracle(s, 0.9)[0]
        assert got <= 10.0

    def test_matches_exhaustive_scan(self):
        checked = 0
        for s, alpha in constructed_systems():
            expected, values = scan_oracle(s, alpha)
            # bisection presumes ESS grows with epsilon on the candidate set
            if all(a <= b + 1e-12 for a, b in zip(values, values[1:])):
                assert adapt_tolerance(s, alpha) == expected
                checked += 1
        assert checked > 3000

    def test_crossing_contract_on_constructed_family(self):
        for s, alpha in constructed_systems():
            assert crossing_contract(s, alpha)

    @given(
        st.lists(st.lists(st.integers(0, 12), min_size=3, max_size=3), min_size=3, max_size=3),
        st.sampled_from([0.5, 0.8, 0.9, 0.97]),
        st.lists(st.floats(0.05, 1), min_size=3, max_size=3),
    )
    def test_crossing_contract_random(self, dist, alpha, raw_w):
        d = 0.37 * np.asarray(dist, float) + 0.1
        s = make_system(d, weights=np.asarray(raw_w) / sum(raw_w), eps=float(np.nextafter(d.max(), np.inf)))
        assert crossing_contract(s, alpha)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.5, 0.9, 0.97]))
    def test_never_increases(self, seed, alpha):
        rng = np.random.default_rng(seed)
        s = make_system(rng.exponential(1, (30, 4)), eps=2.0)
        assert adapt_tolerance(s, alpha) <= 2.0

    def test_ess_hits_target_on_dense_system(self):
        rng = np.random.default_rng(0)
        s = make_system(rng.uniform(0, 1, (2000, 20)), eps=1.0)
        eps = adapt_tolerance(s, 0.9)
        new = ess(reweight(s, eps))
        assert 0.9 * 2000 <= new <= 0.9 * 2000 + 10

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            adapt_tolerance(make_system([[1.0]], eps=2.0), 1.0)


class TestResample:
    def test_integer_weights(self, rng):
        s = make_system([[0.1], [0.2], [0.3], [0.4]], weights=[0.5, 0.5, 0, 0], beta=[1, 2, 3, 4])
        resample_residual(s, rng)
        assert s.beta.tolist() == [1, 1, 2, 2]
        assert s.ess == pytest.approx(4)

    def test_offspring_unbiased(self):
        w = np.array([0.35, 0.25, 0.2, 0.13, 0.07])
        rng = np.random.default_rng(1)
        total = np.zeros(5)
        reps = 10_000
        for _ in range(reps):
            s = make_system(np.zeros((5, 1)), weights=w, beta=np.arange(5.0))
            resample_residual(s, rng)
            total += np.bincount(s.beta.astype(int), minlength=5)
        mean = total / reps
        assert np.abs(mean - 5 * w).sum() / 5 < 0.01

    @given(st.integers(0, 2**32 - 1))
    def test_keeps_size_and_rows(self, seed):
        rng = np.random.default_rng(seed)
        n = 17
        w = rng.dirichlet(np.ones(n))
        s = make_system(rng.uniform(0, 1, (n, 3)), weights=w, beta=np.arange(n, dtype=float))
        d_before = s.distances.copy()
        resample_residual(s, rng)
        assert s.n == n and s.ess == pytest.approx(n)
        idx = s.beta.astype(int)
        assert np.array_equal(s.distances, d_before[idx])
        counts = np.bincount(idx, minlength=n)
        assert np.all(counts >= np.floor(n * w))


class TestBandwidth:
    def test_examples(self):
        assert adapt_bandwidth(make_system([[0], [0]], beta=[0.0, 1.0])) == pytest.approx(0.5)
        assert adapt_bandwidth(make_system([[0], [0]], beta=[0.3, 0.3])) == BANDWIDTH_FLOOR

    @given(st.floats(0.1, 10))
    def test_scaling(self, c):
        s1 = make_system(np.zeros((3, 1)), weights=[0.2, 0.3, 0.5], beta=[0.1, 0.4, 0.8])
        s2 = make_system(np.zeros((3, 1)), weights=[0.2, 0.3, 0.5], beta=c * np.array([0.1, 0.4, 0.8]))
        assert adapt_bandwidth(s2) == pytest.approx(c * c * adapt_bandwidth(s1), rel=1e-9)


class TestMutate:
    cfg = SMCConfig(n_particles=3, n_replicates=4, seed=0)

    def test_outside_prior_rejected(self):
        prior = UniformPrior(0.0, 1.0)
        s = make_system(np.full((3, 4), 0.1), eps=1.0, beta=[0.5, 0.5, 0.5])
        acc = mutate(s, prior, FixedGenerator([0.1] * 4), 1e6, self.cfg)
        assert s.beta.tolist() == [0.5, 0.5, 0.5]
        assert acc < 1

    def test_zero_alive_proposal_rejected(self):
        prior = UniformPrior(0.0, 1.0)
        s = make_system(np.full((3, 4), 0.1), eps=1.0, beta=[0.5, 0.5, 0.5])
        acc = mutate(s, prior, FixedGenerator([5.0] * 4), 1e-4, self.cfg)
        assert acc == 0
        assert s.beta.tolist() == [0.5, 0.5, 0.5]

    def test_identity_always_accepted(self):
        prior = UniformPrior(0.0, 1.0)
        s = make_system(np.full((3, 4), 0.1), eps=1.0, beta=[0.5, 0.5, 0.5])
        acc = mutate(s, prior, FixedGenerator([0.1] * 4), 1e-20, self.cfg)
        assert acc == 1.0


class TestGenerators:
    def test_synthetic_matches_table(self, rng):
        t = linear_table(sd=2.0)
        x = SyntheticGenerator(t).draw(1.0, 20000, rng)
        mu, sd = t.query(1.0)
        assert abs(x.mean() - mu) < 4 * sd / math.sqrt(20000)
        assert x.std() == pytest.approx(sd, rel=0.03)

    def test_model_generator_beta_zero(self, rng):
        lat = Lattice(10, 10, 2)
        x = ModelGenerator(lat, burn_in=5, thin=2).draw(0.0, 400, rng)
        assert x.size == 400
        assert abs(x.mean() - 90) < 4 * math.sqrt(45) / math.sqrt(400)

    def test_draw_summaries_thread_independent(self):
        gen = ModelGenerator(Lattice(6, 6, 3), burn_in=5, thin=2)
        betas = np.linspace(0, 1.5, 9)
        a = draw_summaries(gen, betas, 5, seed=3, t=2, threads=1)
        b = draw_summaries(gen, betas, 5, seed=3, t=2, threads=4)
        assert np.array_equal(a, b)


class TestInitialize:
    def test_uniform_and_supported(self):
        prior = UniformPrior(0.0, 2.0)
        cfg = SMCConfig(n_particles=500, n_replicates=10, seed=1)
        s = initialize(prior, SyntheticGenerator(linear_table()), 1000.0, cfg)
        assert np.all(s.weights == 1 / 500) and s.ess == pytest.approx(500)
        assert prior.contains(s.beta).all()
        assert (s.distances < s.epsilon).all()

    def test_sharp_table_distances(self):
        t = linear_table(sd=0.0)
        prior = UniformPrior(0.0, 2.0)
        cfg = SMCConfig(n_particles=50, n_replicates=3, seed=1)
        s = initialize(prior, SyntheticGenerator(t), 1000.0, cfg)
        mu, _ = t.query(s.beta)
        assert np.allclose(s.distances, np.abs(mu - 1000.0)[:, None], atol=1e-4)


class TestRun:
    @given(st.integers(0, 2**16), st.floats(0.1, 1.9))
    def test_invariants(self, seed, beta_true):
        t = linear_table(sd=20.0)
        cfg = SMCConfig(n_particles=100, n_replicates=5, seed=seed, max_iterations=40)
        s_obs = t.query(beta_true)[0]
        tr = run(UniformPrior(0.0, 2.0), SyntheticGenerator(t), s_obs, cfg)
        eps = tr.epsilon
        assert np.all(np.diff(eps) <= 0)
        assert abs(tr.weights.sum() - 1) < 1e-10
        for r in tr.records:
            assert 1 - 1e-9 <= r.ess <= cfg.n_particles + 1e-9
        assert tr.stop_reason in ("acceptance", "epsilon", "max_iterations")

    def test_self_consistency(self):
        t = linear_table(sd=10.0)
        s_obs = t.query(0.6)[0]
        cfg = SMCConfig(n_particles=1000, n_replicates=20, seed=4)
        tr = run(UniformPrior(0.0, 2.0), SyntheticGenerator(t), s_obs, cfg)
        # posterior sd is about 10 / slope(=661) ~ 0.015
        assert abs(tr.posterior_mean() - 0.6) < 0.03
        lo, hi = tr.credible_interval()
        assert lo < 0.6 < hi

    def test_deterministic(self):
        t = linear_table()
        cfg = SMCConfig(n_particles=200, n_replicates=5, seed=8, max_iterations=10)
        a = run(UniformPrior(0.0, 2.0), SyntheticGenerator(t), 900.0, cfg)
        b = run(UniformPrior(0.0, 2.0), SyntheticGenerator(t), 900.0, cfg)
        assert np.array_equal(a.beta, b.beta) and np.array_equal(a.weights, b.weights)


def test_weighted_quantile():
    x = np.array([3.0, 1.0, 2.0, 4.0])
    w = np.array([0.25, 0.25, 0.25, 0.25])
    assert weighted_quantile(x, w, 0.5) == 2.0
    assert weighted_quantile(x, w, 0.01) == 1.0
    assert weighted_quantile(x, w, 0.99) == 4.0


def test_config_defaults():
    cfg = SMCConfig()
    assert (cfg.n_particles, cfg.alpha, cfg.ess_min) == (10_000, 0.97, 5000)
    with pytest.raises(ValueError):
        SMCConfig(alpha=1.2)
