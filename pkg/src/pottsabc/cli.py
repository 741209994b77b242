"""``pottsabc`` command line.

Exit codes: 0 success, 1 usage, 2 input/format error, 3 infeasible
(oracle budget, binding-table mismatch).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import shlex
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .binding import GridSpec, TableMismatchError, build_table, load_table, save_table, smooth_table
from .exchange import ExchangeConfig, run_exchange, run_exchange_hidden
from .hidden import NoisePriors, fit_hidden_potts
from .lattice import (
    FormatError,
    LabelImage,
    Lattice,
    ObservedImage,
    critical_beta,
    load_label_image,
    load_observed_image,
    random_labels,
    read_pgm,
    save_label_image,
    save_observed_image,
)
from .samplers import OracleInfeasibleError, SimulationConfig, binomial_moments_beta0, exact_moments, sw_chain
from .smc import ModelGenerator, SMCConfig, SyntheticGenerator, UniformPrior

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2, 3

PROFILES = {
    "paper": {
        "rows": 125, "cols": 125, "points": 1000, "iterations": 1000, "burn_in": 500,
        "particles": 10_000, "replicates": 200, "sweeps": 1000,
        "exchange_iterations": 100_000, "exchange_burn_in": 5_000,
    },
    "desk": {
        "rows": 32, "cols": 32, "points": 200, "iterations": 1000, "burn_in": 500,
        "particles": 1000, "replicates": 50, "sweeps": 100,
        "exchange_iterations": 20_000, "exchange_burn_in": 1_000,
    },
}


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fill(args, *names):
    prof = PROFILES[args.profile]
    for name in names:
        if getattr(args, name, None) is None:
            setattr(args, name, prof[name])


def _guard(paths, force: bool):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise CLIError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _write_table(path, header: str, rows) -> None:
    lines = [header] + [" ".join(_fmt(v) for v in row) for row in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_manifest(path, command: str, args, outputs, timings: dict, extra: dict | None = None) -> None:
    items = {"command": command, "version": __version__, "created": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    items["argv"] = shlex.join(getattr(args, "argv", []))
    for key, val in sorted(vars(args).items()):
        if key in ("func", "argv"):
            continue
        items[f"arg.{key}"] = val
    items["outputs"] = ",".join(str(p) for p in outputs)
    for key, val in timings.items():
        items[f"time.{key}"] = f"{val:.6f}"
    items.update(extra or {})
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()))


def manifest_argv(path) -> list[str]:
    """Command-line arguments recorded in a manifest, ready to pass back to ``main``."""
    return shlex.split(read_manifest(path)["argv"])


def read_manifest(path) -> dict:
    out = {}
    for ln in Path(path).read_text().splitlines():
        if "=" in ln:
            k, v = ln.split("=", 1)
            out[k] = v
    return out


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError as exc:
        raise CLIError(f"bad number list {text!r}", EXIT_USAGE) from exc


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    _fill(args, "rows", "cols", "iterations", "burn_in")
    prefix = Path(args.out)
    outs = [prefix.with_name(prefix.name + s) for s in (".labels.txt", ".trace.txt")]
    if args.noise_means:
        outs.append(prefix.with_name(prefix.name + ".observed.txt"))
    _guard(outs + [prefix.with_name(prefix.name + ".manifest.txt")], args.force)
    try:
        config = SimulationConfig(args.iterations, args.burn_in, args.seed)
        lattice = Lattice(args.rows, args.cols, args.k)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from exc
    means = _floats(args.noise_means) if args.noise_means else None
    if means is not None and len(means) != args.k:
        raise CLIError("--noise-means needs one value per label", EXIT_USAGE)
    t0 = time.perf_counter()
    rng = np.random.default_rng(args.seed)
    labels = random_labels(lattice, rng)
    sw_chain(labels, lattice.k, args.beta, config.burn_in, rng, record=False)
    _, trace = sw_chain(labels, lattice.k, args.beta, config.retained, rng)
    z = LabelImage(lattice, labels)
    save_label_image(z, outs[0])
    _write_table(outs[1], "# iteration S", enumerate(trace.tolist(), start=config.burn_in + 1))
    if means is not None:
        y = np.asarray(means)[z.labels - 1] + args.noise_sd * rng.standard_normal(lattice.shape)
        save_observed_image(ObservedImage(lattice, y), outs[2])
    elapsed = time.perf_counter() - t0
    write_manifest(prefix.with_name(prefix.name + ".manifest.txt"), "simulate", args, outs, {"total": elapsed})
    print(f"simulated {lattice.rows}x{lattice.cols} k={lattice.k} beta={args.beta}: final S={int(trace[-1])}, mean S={trace.mean():.3f} ({elapsed:.2f}s)")
    return EXIT_OK


def cmd_precompute(args) -> int:
    _fill(args, "rows", "cols", "points", "iterations", "burn_in")
    out = Path(args.out)
    manifest = out.with_name(out.name + ".manifest.txt")
    _guard([out, manifest], args.force)
    try:
        lattice = Lattice(args.rows, args.cols, args.k)
        config = SimulationConfig(args.iterations, args.burn_in, args.seed)
        bc = critical_beta(args.k)
        if args.grid == "truncated-normal":
            spec = GridSpec(
                args.points,
                "truncated-normal",
                center=bc if args.center is None else args.center,
                spread=bc / 2 if args.spread is None else args.spread,
                lower=args.lower if args.lower is not None else 0.0,
                upper=args.upper if args.upper is not None else np.inf,
            )
        else:
            spec = GridSpec(
                args.points,
                "regular",
                lower=args.lower if args.lower is not None else 0.0,
                upper=args.upper if args.upper is not None else 3 * bc,
            )
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from exc
    t0 = time.perf_counter()
    table = build_table(spec, lattice, config, args.seed, threads=args.threads)
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    if not args.no_smooth:
        table = smooth_table(table, args.bandwidth, args.smoother)
    t_smooth = time.perf_counter() - t0
    try:
        save_table(table, out)
    except OSError as exc:
        raise CLIError(f"cannot write {out}: {exc}") from exc
    timings = {"build": t_build, "smooth": t_smooth, "total": t_build + t_smooth}
    write_manifest(manifest, "precompute", args, [out], timings)
    print(f"binding table: {len(table)} points, build {t_build:.2f}s, smooth {t_smooth:.3f}s -> {out}")
    return EXIT_OK


def _load_y(path, k):
    try:
        return load_observed_image(path, k)
    except FormatError as exc:
        raise CLIError(str(exc)) from exc


def cmd_fit(args) -> int:
    _fill(args, "particles", "replicates", "sweeps")
    prefix = Path(args.out)
    names = {s: prefix.with_name(prefix.name + f".{s}.txt") for s in ("posterior", "trace", "noise", "labels", "manifest")}
    _guard(names.values(), args.force)
    y = _load_y(args.y, args.k)
    lattice = Lattice(y.lattice.rows, y.lattice.cols, args.k)
    if args.backend == "synthetic":
        if not args.table:
            raise CLIError("--backend synthetic needs --table", EXIT_USAGE)
        try:
            table = load_table(args.table)
        except FormatError as exc:
            raise CLIError(str(exc)) from exc
        try:
            table.check_compatible(lattice)
        except TableMismatchError as exc:
            raise CLIError(str(exc), EXIT_INFEASIBLE) from exc
        gen = SyntheticGenerator(table)
    else:
        gen = ModelGenerator(lattice, burn_in=args.model_burn_in, thin=args.model_thin)
    upper = critical_beta(args.k) if args.prior_upper is None else args.prior_upper
    try:
        prior = UniformPrior(args.prior_lower, upper)
        config = SMCConfig(
            n_particles=args.particles,
            n_replicates=args.replicates,
            alpha=args.alpha,
            ess_min=args.ess_min,
            min_acceptance=args.min_acceptance,
            max_iterations=args.max_iterations,
            min_rel_eps_change=args.min_eps_change,
            seed=args.seed,
            threads=args.threads,
        )
        priors = NoisePriors(args.mu_mean, args.mu_var, args.sigma_shape, args.sigma_rate)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from exc
    t0 = time.perf_counter()
    res = fit_hidden_potts(y, args.k, prior, priors, gen, config, sweeps=args.sweeps, init_sweeps=args.init_sweeps)
    total = time.perf_counter() - t0
    _write_table(names["posterior"], "# beta weight", zip(res.beta.tolist(), res.weights.tolist()))
    _write_table(
        names["trace"],
        "# iteration epsilon ess acceptance_rate s_obs",
        [(r.t, r.epsilon, r.ess, r.acceptance_rate, r.s_obs) for r in res.records],
    )
    noise_rows = [(t, j + 1, m[j], s[j]) for t, m, s in res.noise_trace for j in range(args.k)]
    _write_table(names["noise"], "# iteration j mu sigma2", noise_rows)
    save_label_image(res.labels, names["labels"])
    lo, hi = res.credible_interval()
    extra = {
        "backend": args.backend,
        "iterations": res.n_iterations,
        "stop_reason": res.stop_reason,
        "posterior_mean": repr(res.posterior_mean()),
        "ci95": f"{lo!r},{hi!r}",
        "warnings": " | ".join(res.warnings),
    }
    timings = dict(res.timings, total=total)
    outs = [names[s] for s in ("posterior", "trace", "noise", "labels")]
    write_manifest(names["manifest"], "fit", args, outs, timings, extra)
    print(
        f"fit ({args.backend}): {res.n_iterations} SMC iterations ({res.stop_reason}), "
        f"beta mean {res.posterior_mean():.4f}, 95% CI [{lo:.4f}, {hi:.4f}], {total:.2f}s"
    )
    for w in res.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EXIT_OK


def cmd_exchange(args) -> int:
    _fill(args, "exchange_iterations", "exchange_burn_in")
    if (args.z is None) == (args.y is None):
        raise CLIError("give exactly one of --z (labels) or --y (observed image)", EXIT_USAGE)
    prefix = Path(args.out)
    trace_path = prefix.with_name(prefix.name + ".trace.txt")
    summary_path = prefix.with_name(prefix.name + ".summary.txt")
    manifest = prefix.with_name(prefix.name + ".manifest.txt")
    _guard([trace_path, summary_path, manifest], args.force)
    try:
        config = ExchangeConfig(args.exchange_iterations, args.exchange_burn_in, args.proposal_sd, args.aux_sweeps, args.seed)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from exc
    t0 = time.perf_counter()
    if args.z is not None:
        try:
            z = load_label_image(args.z)
        except FormatError as exc:
            raise CLIError(str(exc)) from exc
        k = z.lattice.k
        upper = critical_beta(k) if args.prior_upper is None else args.prior_upper
        prior = UniformPrior(args.prior_lower, upper)
        res = run_exchange(z, prior, config)
    else:
        if args.k is None:
            raise CLIError("--y needs --k", EXIT_USAGE)
        y = _load_y(args.y, args.k)
        upper = critical_beta(args.k) if args.prior_upper is None else args.prior_upper
        prior = UniformPrior(args.prior_lower, upper)
        res = run_exchange_hidden(y, args.k, prior, NoisePriors(), config)
    total = time.perf_counter() - t0
    _write_table(trace_path, "# iteration beta", enumerate(res.trace.tolist(), start=config.burn_in + 1))
    summary = {
        "acceptance_rate": repr(res.acceptance_rate),
        "autocorr_ess": repr(res.ess),
        "posterior_mean": repr(res.posterior_mean()),
        "posterior_sd": repr(float(res.trace.std(ddof=1))),
    }
    summary_path.write_text("".join(f"{k}={v}\n" for k, v in summary.items()))
    write_manifest(manifest, "exchange", args, [trace_path, summary_path], {"total": total}, summary)
    print(f"exchange: acceptance {res.acceptance_rate:.3f}, ESS {res.ess:.1f}, beta mean {res.posterior_mean():.4f}, {total:.2f}s")
    return EXIT_OK


def cmd_oracle(args) -> int:
    out = Path(args.out)
    manifest = out.with_name(out.name + ".manifest.txt")
    _guard([out, manifest], args.force)
    try:
        lattice = Lattice(args.rows, args.cols, args.k)
    except ValueError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from exc
    betas = _floats(args.beta)
    t0 = time.perf_counter()
    rows = []
    try:
        for b in betas:
            m = exact_moments(lattice, b)
            rows.append((b, m.mean, m.sd))
    except OracleInfeasibleError as exc:
        raise CLIError(str(exc), EXIT_INFEASIBLE) from exc
    total = time.perf_counter() - t0
    _write_table(out, "# beta mean sd", rows)
    b0 = binomial_moments_beta0(lattice)
    write_manifest(manifest, "oracle", args, [out], {"total": total}, {"beta0_mean": repr(b0.mean), "beta0_sd": repr(b0.sd)})
    print(f"exact moments for {len(rows)} beta values on {lattice.rows}x{lattice.cols} k={lattice.k} -> {out}")
    return EXIT_OK


def _read_band(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            magic = fh.read(2)
    except OSError as exc:
        raise CLIError(f"cannot read {path}: {exc}") from exc
    try:
        if magic in (b"P2", b"P5"):
            return read_pgm(path)
        return load_observed_image(path).values
    except FormatError as exc:
        raise CLIError(str(exc)) from exc


def ndvi(nir: np.ndarray, vis: np.ndarray) -> tuple[np.ndarray, int]:
    """(NIR - VIS) / (NIR + VIS) per pixel; zero-sum pixels map to 0. Returns (image, zero count)."""
    nir = np.asarray(nir, dtype=np.float64)
    vis = np.asarray(vis, dtype=np.float64)
    if nir.shape != vis.shape:
        raise ValueError(f"band shapes differ: {nir.shape} vs {vis.shape}")
    if np.any(nir < 0) or np.any(vis < 0):
        raise ValueError("band values must be non-negative")
    # extended precision keeps the float64 result correctly rounded, e.g. (0.9, 0.3) -> 0.5
    a = nir.astype(np.longdouble)
    b = vis.astype(np.longdouble)
    den = a + b
    zero = den == 0
    out = np.divide(a - b, den, out=np.zeros_like(den), where=~zero)
    return np.clip(out.astype(np.float64), -1.0, 1.0), int(zero.sum())


def cmd_ndvi(args) -> int:
    out = Path(args.out)
    manifest = out.with_name(out.name + ".manifest.txt")
    _guard([out, manifest], args.force)
    t0 = time.perf_counter()
    nir = _read_band(args.nir)
    vis = _read_band(args.vis)
    try:
        img, n_zero = ndvi(nir, vis)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    save_observed_image(ObservedImage(Lattice(*img.shape), img), out)
    write_manifest(manifest, "ndvi", args, [out], {"total": time.perf_counter() - t0}, {"zero_denominator_pixels": n_zero})
    print(f"NDVI {img.shape[0]}x{img.shape[1]} -> {out}; {n_zero} zero-denominator pixels set to 0")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pottsabc", description="SMC-ABC for the hidden Potts model with a precomputed binding function.")
    p.add_argument("--version", action="version", version=f"pottsabc {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--profile", choices=sorted(PROFILES), default="paper")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("simulate", help="draw a label image by Swendsen-Wang")
    common(sp)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--beta", type=float, required=True)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", type=int)
    sp.add_argument("--noise-means", help="comma list, one per label: also write a noisy observed image")
    sp.add_argument("--noise-sd", type=float, default=1.0)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("precompute", help="build and smooth a binding table")
    common(sp)
    sp.add_argument("--rows", type=int)
    sp.add_argument("--cols", type=int)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--grid", choices=["truncated-normal", "regular"], default="truncated-normal")
    sp.add_argument("--points", type=int)
    sp.add_argument("--center", type=float)
    sp.add_argument("--spread", type=float)
    sp.add_argument("--lower", type=float)
    sp.add_argument("--upper", type=float)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--burn-in", type=int)
    sp.add_argument("--bandwidth", type=float)
    sp.add_argument("--smoother", choices=["local-linear", "nadaraya-watson"], default="local-linear")
    sp.add_argument("--no-smooth", action="store_true")
    sp.add_argument("--out", required=True, help="binding table path")
    sp.set_defaults(func=cmd_precompute)

    sp = sub.add_parser("fit", help="fit the hidden Potts model by SMC-ABC")
    common(sp)
    sp.add_argument("--y", required=True, help="observed image (text matrix or PGM)")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--backend", choices=["synthetic", "model"], default="synthetic")
    sp.add_argument("--table", help="binding table for the synthetic backend")
    sp.add_argument("--prior-lower", type=float, default=0.0)
    sp.add_argument("--prior-upper", type=float, help="default: critical beta for k")
    sp.add_argument("--particles", type=int)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--alpha", type=float, default=0.97)
    sp.add_argument("--ess-min", type=float)
    sp.add_argument("--min-acceptance", type=float, default=0.01)
    sp.add_argument("--max-iterations", type=int, default=200)
    sp.add_argument("--min-eps-change", type=float, default=1e-3)
    sp.add_argument("--sweeps", type=int, help="chequerboard sweeps per SMC iteration")
    sp.add_argument("--init-sweeps", type=int, default=20)
    sp.add_argument("--model-burn-in", type=int, default=50)
    sp.add_argument("--model-thin", type=int, default=10)
    sp.add_argument("--mu-mean", type=float, default=0.0)
    sp.add_argument("--mu-var", type=float, default=100.0**2)
    sp.add_argument("--sigma-shape", type=float, default=1.0)
    sp.add_argument("--sigma-rate", type=float, default=0.01)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("exchange", help="approximate exchange algorithm baseline")
    common(sp)
    sp.add_argument("--z", help="fully observed label image")
    sp.add_argument("--y", help="noisy observed image (hidden variant)")
    sp.add_argument("--k", type=int)
    sp.add_argument("--prior-lower", type=float, default=0.0)
    sp.add_argument("--prior-upper", type=float)
    sp.add_argument("--iterations", dest="exchange_iterations", type=int)
    sp.add_argument("--burn-in", dest="exchange_burn_in", type=int)
    sp.add_argument("--proposal-sd", type=float, default=0.1)
    sp.add_argument("--aux-sweeps", type=int, default=500)
    sp.add_argument("--out", required=True, help="output prefix")
    sp.set_defaults(func=cmd_exchange)

    sp = sub.add_parser("oracle", help="exact moments of S by enumeration")
    common(sp)
    sp.add_argument("--rows", type=int, required=True)
    sp.add_argument("--cols", type=int, required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--beta", required=True, help="comma-separated beta values")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("ndvi", help="NDVI from near-infrared and visible bands")
    common(sp)
    sp.add_argument("--nir", required=True)
    sp.add_argument("--vis", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ndvi)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    args = parser.parse_args(argv)
    args.argv = list(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"pottsabc {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except (FormatError, OSError) as exc:
        print(f"pottsabc {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
