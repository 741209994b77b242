"""Precomputed binding function beta -> (mean, sd) of the Potts statistic.

A table is built once per (lattice shape, k), smoothed, written to a small
text file and then queried by piecewise-linear interpolation while fitting.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lattice import FormatError, Lattice, critical_beta, edge_count
from .samplers import SimulationConfig, simulate_summary_trace

GRID_MODES = ("truncated-normal", "regular", "explicit")
SMOOTHERS = ("local-linear", "nadaraya-watson")
SD_FLOOR_FRACTION = 1e-8


class TableMismatchError(ValueError):
    """A binding table was built for a different lattice shape or label count."""


@dataclass(frozen=True)
class GridSpec:
    count: int
    mode: str = "truncated-normal"
    center: float = 1.0
    spread: float = 0.5
    lower: float = 0.0
    upper: float = math.inf
    values: tuple = ()

    def __post_init__(self):
        if self.mode not in GRID_MODES:
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.mode == "explicit":
            if len(self.values) < 2:
                raise ValueError("explicit grid needs at least two values")
            return
        if self.count < 2:
            raise ValueError("grid needs count >= 2")
        if not self.lower < self.upper:
            raise ValueError(f"degenerate grid bounds [{self.lower}, {self.upper}]")
        if self.mode == "regular" and not math.isfinite(self.upper):
            raise ValueError("regular grid needs a finite upper bound")
        if self.spread <= 0:
            raise ValueError("spread must be positive")

    @classmethod
    def around_critical(cls, k: int, count: int = 1000, **kw) -> "GridSpec":
        """Truncated normal centred on the critical point with sd = beta_crit / 2."""
        bc = critical_beta(k)
        return cls(count=count, center=bc, spread=bc / 2, **kw)


def _strictly_increasing(x: np.ndarray) -> np.ndarray:
    x = np.sort(np.asarray(x, dtype=np.float64))
    for i in range(1, x.size):
        if x[i] <= x[i - 1]:
            x[i] = np.nextafter(x[i - 1], np.inf)
    return x


def sample_grid(spec: GridSpec, rng) -> np.ndarray:
    if spec.mode == "explicit":
        return _strictly_increasing(spec.values)
    if spec.mode == "regular":
        return np.linspace(spec.lower, spec.upper, spec.count)
    out = np.empty(0)
    while out.size < spec.count:
        draw = rng.normal(spec.center, spec.spread, size=2 * (spec.count - out.size) + 16)
        keep = draw[(draw > spec.lower) & (draw <= spec.upper)]
        out = np.concatenate([out, keep])
    return _strictly_increasing(out[: spec.count])


def estimate_point(beta: float, lattice: Lattice, config: SimulationConfig, rng=None) -> tuple[float, float]:
    """Sample mean and sd (ddof=1) of the retained Swendsen-Wang trace at ``beta``."""
    if beta < 0:
        raise ValueError("beta must be non-negative")
    trace = simulate_summary_trace(lattice, beta, config, rng).astype(np.float64)
    sd = float(trace.std(ddof=1)) if trace.size > 1 else 0.0
    return float(trace.mean()), sd


@dataclass(frozen=True, eq=False)
class BindingTable:
    beta: np.ndarray
    mu: np.ndarray
    sd: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arrays = [np.array(a, dtype=np.float64) for a in (self.beta, self.mu, self.sd)]
        if not (arrays[0].ndim == 1 and arrays[0].shape == arrays[1].shape == arrays[2].shape):
            raise ValueError("beta, mu and sd must be 1-D arrays of equal length")
        if arrays[0].size == 0:
            raise ValueError("binding table is empty")
        if np.any(np.diff(arrays[0]) <= 0):
            raise ValueError("beta grid must be strictly increasing")
        if np.any(arrays[2] < 0):
            raise ValueError("sd column must be non-negative")
        for a in arrays:
            a.flags.writeable = False
        object.__setattr__(self, "beta", arrays[0])
        object.__setattr__(self, "mu", arrays[1])
        object.__setattr__(self, "sd", arrays[2])
        object.__setattr__(self, "meta", dict(self.meta))

    def __len__(self):
        return self.beta.size

    def __eq__(self, other):
        return (
            isinstance(other, BindingTable)
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.mu, other.mu)
            and np.array_equal(self.sd, other.sd)
            and self.meta == other.meta
        )

    @property
    def n_edges(self) -> int | None:
        if "rows" in self.meta and "cols" in self.meta:
            return edge_count(Lattice(int(self.meta["rows"]), int(self.meta["cols"])))
        return None

    def check_compatible(self, lattice: Lattice) -> None:
        got = tuple(self.meta.get(key) for key in ("rows", "cols", "k"))
        want = (lattice.rows, lattice.cols, lattice.k)
        if got != want:
            raise TableMismatchError(
                f"binding table built for rows,cols,k={got}, image needs {want}"
            )

    def query(self, beta):
        """Interpolated ``(mu, sd)``; constant beyond the grid ends.

        Accepts a scalar or an array of beta values.
        """
        mu = np.interp(beta, self.beta, self.mu)
        sd = np.interp(beta, self.beta, self.sd)
        e = self.n_edges
        if e:
            sd = np.maximum(sd, SD_FLOOR_FRACTION * e)
        if np.ndim(beta) == 0:
            return float(mu), float(sd)
        return mu, sd


def query(table: BindingTable, beta):
    return table.query(beta)


def build_table(
    spec: GridSpec,
    lattice: Lattice,
    config: SimulationConfig,
    seed: int,
    threads: int = 1,
) -> BindingTable:
    """Estimate the binding function on a grid.

    The grid is drawn from ``SeedSequence([seed])`` and grid point ``i`` runs
    its own chain from ``SeedSequence([seed, i])``, so the result does not
    depend on ``threads``.
    """
    grid = sample_grid(spec, np.random.default_rng(np.random.SeedSequence([seed])))

    def point(i):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        return estimate_point(float(grid[i]), lattice, config, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(point, range(grid.size)))
    else:
        results = [point(i) for i in range(grid.size)]
    mu = np.array([r[0] for r in results])
    sd = np.array([r[1] for r in results])
    meta = {
        "rows": lattice.rows,
        "cols": lattice.cols,
        "k": lattice.k,
        "M": config.retained,
        "burnin": config.burn_in,
        "seed": seed,
        "grid": spec.mode,
    }
    return BindingTable(grid, mu, sd, meta)


# ---------------------------------------------------------------------------
# smoothing


def _isotonic_increasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences."""
    vals: list[float] = []
    wts: list[int] = []
    for v in y:
        vals.append(float(v))
        wts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            w = wts[-2] + wts[-1]
            v2 = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / w
            vals[-2:] = [v2]
            wts[-2:] = [w]
    return np.repeat(vals, wts)


def kernel_smooth(x: np.ndarray, y: np.ndarray, bandwidth: float, method: str = "local-linear") -> np.ndarray:
    """Gaussian-kernel regression of ``y`` on ``x``, evaluated at ``x``.

    ``nadaraya-watson`` is the local-constant estimator; ``local-linear``
    fits a weighted line at each point and has no first-order boundary bias.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if method not in SMOOTHERS:
        raise ValueError(f"unknown smoother {method!r}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d = (x[None, :] - x[:, None]) / bandwidth
    w = np.exp(-0.5 * d * d)
    if method == "nadaraya-watson":
        return (w @ y) / w.sum(axis=1)
    dx = x[None, :] - x[:, None]
    s0 = w.sum(axis=1)
    s1 = (w * dx).sum(axis=1)
    s2 = (w * dx * dx).sum(axis=1)
    t0 = w @ y
    t1 = (w * dx) @ y
    det = s0 * s2 - s1 * s1
    out = t0 / s0
    # fall back to local-constant where the local design is singular
    ok = det > 1e-12 * s0 * s2
    out[ok] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
    return out


def default_bandwidth(beta: np.ndarray) -> float:
    return 1.5 * float(np.median(np.diff(beta)))


def smooth_table(table: BindingTable, bandwidth: float | None = None, method: str = "local-linear") -> BindingTable:
    """Kernel-smooth both columns on the same grid; the mean column is then made non-decreasing."""
    if len(table) < 5:
        raise ValueError("smoothing needs at least 5 table entries")
    if bandwidth is None:
        bandwidth = default_bandwidth(table.beta)
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    mu = _isotonic_increasing(kernel_smooth(table.beta, table.mu, bandwidth, method))
    sd = np.maximum(kernel_smooth(table.beta, table.sd, bandwidth, method), 0.0)
    e = table.n_edges
    if e is not None:
        mu = np.clip(mu, 0.0, e)
    meta = dict(table.meta)
    meta["smoothing"] = f"{method}:{bandwidth!r}"
    return replace(table, mu=mu, sd=sd, meta=meta)


# ---------------------------------------------------------------------------
# persistence

_INT_KEYS = ("rows", "cols", "k", "M", "burnin", "seed")


def save_table(table: BindingTable, path) -> None:
    meta = dict(table.meta)
    head = " ".join(f"{key}={meta.pop(key)}" for key in _INT_KEYS if key in meta)
    extra = " ".join(f"{key}={val}" for key, val in sorted(meta.items()))
    lines = ["# pottsabc binding table", f"# {head}"]
    if extra:
        lines.append(f"# {extra}")
    lines.append("# beta mu sd")
    lines += [f"{b!r} {m!r} {s!r}" for b, m, s in zip(table.beta.tolist(), table.mu.tolist(), table.sd.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path, lattice: Lattice | None = None) -> BindingTable:
    """Read a table; when ``lattice`` is given, refuse a table built for another shape/k."""
    try:
        text = Path(path).read_text()
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read binding table {path}: {exc}") from exc
    meta: dict = {}
    rows = []
    for ln in text.splitlines():
        s = ln.strip()
        if not s:
            continue
        if s.startswith("#"):
            for tok in s[1:].split():
                if "=" in tok:
                    key, val = tok.split("=", 1)
                    meta[key] = int(val) if key in _INT_KEYS else val
            continue
        parts = s.split()
        if len(parts) != 3:
            raise FormatError(f"{path}: expected 'beta mu sd', got {s!r}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    if not rows:
        raise FormatError(f"{path}: no table rows")
    missing = [key for key in ("rows", "cols", "k") if key not in meta]
    if missing:
        raise FormatError(f"{path}: header lacks {', '.join(missing)}")
    arr = np.array(rows)
    try:
        table = BindingTable(arr[:, 0], arr[:, 1], arr[:, 2], meta)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if lattice is not None:
        table.check_compatible(lattice)
    return table
