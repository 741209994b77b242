import numpy as np
import pytest

from pottsabc import cli
from pottsabc.binding import load_table
from pottsabc.lattice import Lattice, load_label_image, load_observed_image, write_pgm
from pottsabc.samplers import binomial_moments_beta0


def run(*argv):
    return cli.main([str(a) for a in argv])


def same_bytes(a, b):
    return a.read_bytes() == b.read_bytes()


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    """A small simulated noisy image plus a matching binding table."""
    d = tmp_path_factory.mktemp("scene")
    assert run("simulate", "--profile", "desk", "--rows", 12, "--cols", 12, "--k", 3, "--beta", 0.6,
               "--iterations", 200, "--burn-in", 100, "--noise-means", "0,3,6", "--noise-sd", 0.5,
               "--seed", 5, "--out", d / "sim") == 0
    assert run("precompute", "--profile", "desk", "--rows", 12, "--cols", 12, "--k", 3, "--grid", "regular",
               "--upper", 3.0, "--points", 40, "--iterations", 200, "--burn-in", 100, "--out", d / "table.txt") == 0
    return d


FIT_FAST = ["--profile", "desk", "--particles", 200, "--replicates", 10, "--sweeps", 10, "--init-sweeps", 3, "--max-iterations", 15]


class TestSimulate:
    def test_beta_zero_uniform_labels(self, tmp_path):
        assert run("simulate", "--rows", 40, "--cols", 40, "--k", 4, "--beta", 0, "--iterations", 20, "--burn-in", 10, "--out", tmp_path / "s") == 0
        z = load_label_image(tmp_path / "s.labels.txt")
        freq = np.bincount(z.labels.ravel(), minlength=5)[1:] / 1600
        assert np.allclose(freq, 0.25, atol=0.04)
        rows = (tmp_path / "s.trace.txt").read_text().splitlines()
        assert rows[0] == "# iteration S" and len(rows) == 11

    def test_same_seed_identical(self, tmp_path):
        args = ["simulate", "--profile", "desk", "--k", 3, "--beta", 0.8, "--iterations", 50, "--burn-in", 10, "--seed", 4]
        assert run(*args, "--out", tmp_path / "a") == 0
        assert run(*args, "--out", tmp_path / "b") == 0
        for ext in (".labels.txt", ".trace.txt"):
            assert same_bytes(tmp_path / f"a{ext}", tmp_path / f"b{ext}")

    def test_paper_setting_lattice(self):
        args = cli.build_parser().parse_args(["simulate", "--k", "3", "--beta", "0.5", "--out", "x"])
        cli._fill(args, "rows", "cols")
        assert (args.rows, args.cols) == (125, 125)

    def test_usage_errors(self, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            run("simulate", "--k", "x", "--beta", 0, "--out", tmp_path / "s")
        assert exc.value.code == 1
        assert run("simulate", "--k", 1, "--beta", 0, "--out", tmp_path / "s") == 1
        assert run("simulate", "--k", 2, "--beta", 0, "--iterations", 5, "--burn-in", 9, "--out", tmp_path / "s") == 1
        assert not list(tmp_path.iterdir())

    def test_no_overwrite_without_force(self, tmp_path):
        args = ["simulate", "--profile", "desk", "--k", 2, "--beta", 0.2, "--iterations", 5, "--burn-in", 1, "--out", tmp_path / "s"]
        assert run(*args) == 0
        before = (tmp_path / "s.labels.txt").read_bytes()
        assert run(*args[:-2], "--seed", 9, *args[-2:]) == 2
        assert (tmp_path / "s.labels.txt").read_bytes() == before
        assert run(*args, "--force") == 0


class TestPrecompute:
    def test_paper_defaults(self):
        p = cli.PROFILES["paper"]
        assert (p["points"], p["iterations"], p["burn_in"]) == (1000, 1000, 500)
        args = cli.build_parser().parse_args(["precompute", "--k", "3", "--out", "t"])
        assert args.profile == "paper"

    def test_threads_byte_identical(self, tmp_path):
        base = ["precompute", "--rows", 8, "--cols", 8, "--k", 3, "--points", 24, "--iterations", 60, "--burn-in", 20, "--seed", 3]
        assert run(*base, "--threads", 1, "--out", tmp_path / "t1.txt") == 0
        assert run(*base, "--threads", 8, "--out", tmp_path / "t8.txt") == 0
        assert same_bytes(tmp_path / "t1.txt", tmp_path / "t8.txt")
        t = load_table(tmp_path / "t1.txt", Lattice(8, 8, 3))
        assert len(t) == 24 and np.all(np.diff(t.mu) >= 0)

    def test_unwritable(self, tmp_path):
        code = run("precompute", "--rows", 4, "--cols", 4, "--k", 2, "--points", 6, "--iterations", 10, "--burn-in", 2,
                   "--out", tmp_path / "missing_dir" / "t.txt")
        assert code == 2


class TestFit:
    def test_outputs(self, scene, tmp_path):
        code = run("fit", *FIT_FAST, "--y", scene / "sim.observed.txt", "--k", 3, "--table", scene / "table.txt",
                   "--prior-upper", 1.005, "--out", tmp_path / "f")
        assert code == 0
        post = np.loadtxt(tmp_path / "f.posterior.txt")
        assert post.shape == (200, 2)
        assert abs(post[:, 1].sum() - 1) < 1e-10
        assert post[:, 0].min() >= 0 and post[:, 0].max() <= 1.005
        trace = (tmp_path / "f.trace.txt").read_text().splitlines()
        assert trace[0] == "# iteration epsilon ess acceptance_rate s_obs"
        eps = np.loadtxt(tmp_path / "f.trace.txt")[:, 1]
        assert np.all(np.diff(eps) <= 0)
        noise = np.loadtxt(tmp_path / "f.noise.txt")
        assert noise.shape[1] == 4 and set(noise[:, 1]) == {1, 2, 3}
        assert load_label_image(tmp_path / "f.labels.txt").lattice == Lattice(12, 12, 3)
        man = cli.read_manifest(tmp_path / "f.manifest.txt")
        assert man["command"] == "fit" and man["arg.prior_upper"] == "1.005"
        assert float(man["time.total"]) >= 0

    def test_missing_table_leaves_nothing(self, scene, tmp_path):
        code = run("fit", *FIT_FAST, "--y", scene / "sim.observed.txt", "--k", 3, "--table", tmp_path / "nope.txt", "--out", tmp_path / "f")
        assert code == 2
        assert not list(tmp_path.glob("f.*"))

    def test_table_mismatch(self, scene, tmp_path):
        code = run("fit", *FIT_FAST, "--y", scene / "sim.observed.txt", "--k", 4, "--table", scene / "table.txt", "--out", tmp_path / "f")
        assert code == 3
        assert not list(tmp_path.glob("f.*"))

    def test_unreadable_image(self, scene, tmp_path):
        (tmp_path / "y.txt").write_text("3 3\n1 2\n")
        assert run("fit", *FIT_FAST, "--y", tmp_path / "y.txt", "--k", 3, "--table", scene / "table.txt", "--out", tmp_path / "f") == 2

    def test_model_backend_threads_identical(self, scene, tmp_path):
        base = ["fit", "--profile", "desk", "--backend", "model", "--particles", 40, "--replicates", 4, "--sweeps", 5,
                "--init-sweeps", 2, "--max-iterations", 3, "--model-burn-in", 5, "--model-thin", 2,
                "--y", scene / "sim.observed.txt", "--k", 3]
        assert run(*base, "--threads", 1, "--out", tmp_path / "a") == 0
        assert run(*base, "--threads", 8, "--out", tmp_path / "b") == 0
        for ext in ("posterior", "trace", "noise", "labels"):
            assert same_bytes(tmp_path / f"a.{ext}.txt", tmp_path / f"b.{ext}.txt")

    def test_manifest_rerun_reproduces(self, scene, tmp_path):
        assert run("fit", *FIT_FAST, "--y", scene / "sim.observed.txt", "--k", 3, "--table", scene / "table.txt", "--seed", 7, "--out", tmp_path / "f") == 0
        argv = cli.manifest_argv(tmp_path / "f.manifest.txt")
        before = {ext: (tmp_path / f"f.{ext}.txt").read_bytes() for ext in ("posterior", "trace", "noise", "labels")}
        assert cli.main(argv + ["--force"]) == 0
        for ext, data in before.items():
            assert (tmp_path / f"f.{ext}.txt").read_bytes() == data


class TestExchange:
    def test_trace_and_summary(self, scene, tmp_path):
        code = run("exchange", "--z", scene / "sim.labels.txt", "--iterations", 60, "--burn-in", 10, "--aux-sweeps", 5,
                   "--out", tmp_path / "e")
        assert code == 0
        rows = (tmp_path / "e.trace.txt").read_text().splitlines()
        assert rows[0] == "# iteration beta" and len(rows) - 1 == 50
        summary = cli.read_manifest(tmp_path / "e.summary.txt")
        assert float(summary["autocorr_ess"]) >= 1
        assert 0 <= float(summary["acceptance_rate"]) <= 1

    def test_hidden_variant_and_determinism(self, scene, tmp_path):
        base = ["exchange", "--y", scene / "sim.observed.txt", "--k", 3, "--iterations", 30, "--burn-in", 5, "--aux-sweeps", 3]
        assert run(*base, "--threads", 1, "--out", tmp_path / "a") == 0
        assert run(*base, "--threads", 8, "--out", tmp_path / "b") == 0
        assert same_bytes(tmp_path / "a.trace.txt", tmp_path / "b.trace.txt")
        assert same_bytes(tmp_path / "a.summary.txt", tmp_path / "b.summary.txt")

    def test_default_sweeps(self):
        args = cli.build_parser().parse_args(["exchange", "--z", "z", "--out", "e"])
        assert args.aux_sweeps == 500

    def test_needs_one_input(self, tmp_path):
        assert run("exchange", "--out", tmp_path / "e") == 1


class TestOracle:
    def test_fixture_curve(self, tmp_path):
        assert run("oracle", "--rows", 3, "--cols", 3, "--k", 2, "--beta", "0,0.5,1,1.5,2", "--out", tmp_path / "o.txt") == 0
        table = np.loadtxt(tmp_path / "o.txt")
        ref = binomial_moments_beta0(Lattice(3, 3, 2))
        assert (table[0, 1], table[0, 2]) == (ref.mean, ref.sd)
        assert table[1, 1] == pytest.approx(7.589484738676649, rel=1e-12)
        assert np.all(np.diff(table[:, 1]) > 0)

    def test_budget_exit_code(self, tmp_path, capsys):
        assert run("oracle", "--rows", 6, "--cols", 6, "--k", 3, "--beta", 0, "--out", tmp_path / "o.txt") == 3
        assert "budget" in capsys.readouterr().err
        assert not (tmp_path / "o.txt").exists()


class TestNDVI:
    def test_formula(self):
        out, zero = cli.ndvi(np.array([[0.9, 0.5], [0.0, 3.0]]), np.array([[0.3, 0.5], [0.0, 0.0]]))
        assert out[0, 0] == 0.5
        assert out[0, 1] == 0.0 and out[1, 0] == 0.0 and out[1, 1] == 1.0
        assert zero == 1

    def test_bounds(self, rng):
        a, b = rng.uniform(0, 1e4, (2, 50, 50))
        out, _ = cli.ndvi(a, b)
        assert out.min() >= -1 and out.max() <= 1

    def test_equal_bands_zero(self, rng):
        a = rng.uniform(0, 10, (5, 5))
        out, _ = cli.ndvi(a, a)
        assert np.all(out == 0)

    def test_command(self, tmp_path, capsys):
        write_pgm(np.array([[230, 0], [10, 20]]), tmp_path / "nir.pgm")
        write_pgm(np.array([[77, 0], [10, 5]]), tmp_path / "vis.pgm")
        assert run("ndvi", "--nir", tmp_path / "nir.pgm", "--vis", tmp_path / "vis.pgm", "--out", tmp_path / "n.txt") == 0
        assert "1 zero-denominator" in capsys.readouterr().out
        y = load_observed_image(tmp_path / "n.txt")
        assert y.values[1, 1] == pytest.approx(0.6)
        assert cli.read_manifest(tmp_path / "n.txt.manifest.txt")["zero_denominator_pixels"] == "1"

    def test_dimension_mismatch(self, tmp_path):
        write_pgm(np.ones((2, 2)), tmp_path / "a.pgm")
        write_pgm(np.ones((2, 3)), tmp_path / "b.pgm")
        assert run("ndvi", "--nir", tmp_path / "a.pgm", "--vis", tmp_path / "b.pgm", "--out", tmp_path / "n.txt") == 2
        assert not (tmp_path / "n.txt").exists()


def test_every_command_writes_one_manifest(scene):
    manifests = sorted(p.name for p in scene.glob("*manifest*"))
    assert manifests == ["sim.manifest.txt", "table.txt.manifest.txt"]
