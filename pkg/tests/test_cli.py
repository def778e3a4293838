"""End-to-end driver tests on small study configurations."""

import csv
import json
import math

import numpy as np
import pytest

from cavityuq import cli, oracle, uq
from cavityuq.geometry import load_deformation_spec


def run_cli(*argv):
    return cli.main(list(argv))


def write_config(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


PILLBOX_UQ = {
    "problem": {
        "kind": "pillbox",
        "length": 0.1,
        "p_max": 1,
        "distribution": {"family": "uniform", "support": [0.04, 0.06]},
    },
    "discretization": {"degree": 2, "elements": 8},
    "modes": 3,
    "grid": {"kind": "tensor", "family": "clenshaw-curtis", "orders": [5]},
}


class TestConfigValidation:
    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli("uq", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)) == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        assert run_cli("uq", "--config", str(path), "--out", str(tmp_path)) == 2

    def test_unknown_top_level_key(self, tmp_path):
        doc = dict(PILLBOX_UQ, surprise=1)
        cfg = write_config(tmp_path, "c.json", doc)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o")) == 2

    def test_unknown_problem_key(self, tmp_path, capsys):
        doc = json.loads(json.dumps(PILLBOX_UQ))
        doc["problem"]["typo"] = True
        cfg = write_config(tmp_path, "c.json", doc)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o")) == 2
        assert "typo" in capsys.readouterr().err

    def test_range_checks(self, tmp_path):
        doc = json.loads(json.dumps(PILLBOX_UQ))
        doc["modes"] = 0
        cfg = write_config(tmp_path, "c.json", doc)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o")) == 2

    def test_bad_tracking_overrides(self, tmp_path):
        doc = json.loads(json.dumps(PILLBOX_UQ))
        doc["tracking"] = {"n1": 5, "n2": 2}
        cfg = write_config(tmp_path, "c.json", doc)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o")) == 2

    def test_bad_worker_count(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", PILLBOX_UQ)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o"), "--workers", "0") == 2

    def test_numerical_failure_exit(self, tmp_path):
        # 18 stations cannot be interpolated on a once-refined patch
        doc = {
            "problem": {
                "kind": "deformed-disk",
                "radius": 0.05,
                "synthetic": {"variables": 18, "samples": 200, "seed": 3},
            },
            "discretization": {"degree": 2, "refinement": 1},
            "modes": 1,
            "grid": {"kind": "smolyak", "family": "gauss-hermite", "level": 1},
        }
        cfg = write_config(tmp_path, "c.json", doc)
        assert run_cli("uq", "--config", cfg, "--out", str(tmp_path / "o")) == 3


class TestPillboxReference:
    def test_labeled_table(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", {"radius": 0.05, "length": 0.1, "count": 10})
        out = tmp_path / "ref"
        assert run_cli("pillbox-reference", "--config", cfg, "--out", str(out)) == 0
        rows = read_csv(out / "pillbox_reference.csv")
        assert rows[0] == ["family", "m", "n", "p", "degeneracy", "f_hz"]
        assert rows[1][0] == "TM" and rows[1][3] == "0"
        f_tm010 = oracle.C0 * oracle.bessel_zero(0, 1) / (2.0 * math.pi * 0.05)
        assert abs(float(rows[1][5]) - f_tm010) < 1e-3
        degs = sum(int(r[4]) for r in rows[1:])
        assert degs == 10


class TestGridCommand:
    def test_smolyak_dump(self, tmp_path):
        cfg = write_config(
            tmp_path, "c.json",
            {"grid": {"kind": "smolyak", "family": "gauss-hermite", "dim": 7, "level": 2}},
        )
        out = tmp_path / "g"
        assert run_cli("grid", "--config", cfg, "--out", str(out)) == 0
        back = uq.load_grid_csv(out / "grid.csv")
        assert back.n_nodes == 127 and back.dim == 7
        assert abs(back.weights.sum() - 1.0) < 1e-12

    def test_tensor_with_support(self, tmp_path):
        cfg = write_config(
            tmp_path, "c.json",
            {"grid": {"kind": "tensor", "family": "gauss-legendre",
                      "orders": [3, 2], "support": [0.0, 1.0]}},
        )
        out = tmp_path / "g"
        assert run_cli("grid", "--config", cfg, "--out", str(out)) == 0
        back = uq.load_grid_csv(out / "grid.csv")
        assert back.n_nodes == 6
        assert back.nodes.min() >= 0.0 and back.nodes.max() <= 1.0


class TestKlFit:
    def test_fit_and_reuse(self, tmp_path):
        C = uq.default_correlated_covariance()
        obs = uq.generate_synthetic_observations(C, np.zeros(18), 3000, seed=77)
        obs_path = tmp_path / "obs.csv"
        uq.save_observations(obs_path, obs)
        cfg = write_config(tmp_path, "c.json",
                           {"observations": str(obs_path), "criterion": 0.95})
        out = tmp_path / "kl"
        assert run_cli("kl-fit", "--config", cfg, "--out", str(out)) == 0
        sampler, mean, modes = load_deformation_spec(out / "kl_model.json")
        assert modes.shape == (18, 7)
        assert sampler.kind == "radial" and sampler.n_stations == 18
        rows = read_csv(out / "kl_spectrum.csv")
        assert len(rows) == 19
        variances = [float(r[1]) for r in rows[1:]]
        assert variances == sorted(variances, reverse=True)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["retained"] == 7
        assert summary["captured_ratio"] >= 0.95


@pytest.fixture(scope="module")
def track_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("track")
    doc = {
        "problem": {"kind": "pillbox", "length": 0.1, "p_max": 1},
        "discretization": {"degree": 2, "elements": 8},
        "modes": 2,
        "sweep": {"start": 0.06, "stop": 0.04, "samples": 11},
    }
    cfg = write_config(tmp, "c.json", doc)
    out = tmp / "run"
    code = cli.main(["track", "--config", cfg, "--out", str(out)])
    return code, out


class TestTrack:
    def test_exit_code(self, track_run):
        assert track_run[0] == 0

    def test_trajectory_files(self, track_run):
        _, out = track_run
        for j in range(2):
            rows = read_csv(out / f"mode_{j:02d}.csv")
            assert rows[0] == ["radius_m", "lambda", "f_hz"]
            assert len(rows) == 12
            radii = [float(r[0]) for r in rows[1:]]
            assert radii[0] == 0.06 and radii[-1] == 0.04
            # tracked identity: each fundamental family is monotone over r
            fs = [float(r[2]) for r in rows[1:]]
            assert all(b > a for a, b in zip(fs, fs[1:]))

    def test_crossing_location(self, track_run):
        _, out = track_run
        summary = json.loads((out / "summary.json").read_text())
        assert abs(summary["crossing_radius_m"] - oracle.crossing_radius(0.1)) < 1e-3

    def test_discrete_samples_rank_ordered(self, track_run):
        _, out = track_run
        rows = read_csv(out / "discrete_samples.csv")
        assert len(rows) == 12
        for r in rows[1:]:
            assert float(r[1]) <= float(r[2])

    def test_newton_stats_reported(self, track_run):
        _, out = track_run
        summary = json.loads((out / "summary.json").read_text())
        for stats in summary["per_mode"].values():
            assert 1.0 <= stats["newton_mean"] <= 3.5
            assert stats["newton_max"] <= 5

    def test_identity_sweep_single_row(self, tmp_path):
        doc = {
            "problem": {"kind": "pillbox", "length": 0.1, "p_max": 1},
            "discretization": {"degree": 2, "elements": 8},
            "modes": 1,
            "sweep": {"start": 0.05, "stop": 0.05, "samples": 7},
        }
        cfg = write_config(tmp_path, "c.json", doc)
        out = tmp_path / "run"
        assert cli.main(["track", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "mode_00.csv")
        assert len(rows) == 2


@pytest.fixture(scope="module")
def pillbox_uq_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("uq")
    cfg = write_config(tmp, "c.json", PILLBOX_UQ)
    out = tmp / "run"
    code = cli.main(["uq", "--config", cfg, "--out", str(out)])
    return code, out, cfg, tmp


class TestPillboxUq:
    def test_exit_and_outputs(self, pillbox_uq_run):
        code, out, _, _ = pillbox_uq_run
        assert code == 0
        for name in ("grid.csv", "mode_table.csv", "moments.csv", "summary.json"):
            assert (out / name).exists()

    def test_moment_table_shape(self, pillbox_uq_run):
        _, out, _, _ = pillbox_uq_run
        rows = read_csv(out / "moments.csv")
        assert rows[0] == ["mode", "family", "axial_order", "base_f_hz", "mean_f_hz", "sd_f_hz"]
        assert len(rows) == 4
        assert rows[1][1] == "TM"

    def test_moments_match_oracle_quadrature(self, pillbox_uq_run):
        # same rule applied to the closed-form frequencies of the matched
        # labels; the discretization bias cancels to first order in the
        # relative comparison
        _, out, _, _ = pillbox_uq_run
        grid = uq.load_grid_csv(out / "grid.csv")
        rows = read_csv(out / "moments.csv")
        labels = {lbl: f for lbl, f in oracle.pillbox_frequencies(0.05, 0.1, 12)}
        for row in rows[1:]:
            base_f, mean_f, sd_f = float(row[3]), float(row[4]), float(row[5])
            label = min(labels, key=lambda L: abs(labels[L] - base_f))
            fs = np.array([oracle.mode_frequency(label, r, 0.1) for r in grid.nodes[:, 0]])
            e_ref, v_ref = uq.estimate_moments(fs, grid)
            assert abs(mean_f - e_ref[0]) / e_ref[0] < 2e-3
            assert abs(sd_f - math.sqrt(v_ref[0])) / math.sqrt(v_ref[0]) < 5e-3

    def test_newton_economy(self, pillbox_uq_run):
        _, out, _, _ = pillbox_uq_run
        summary = json.loads((out / "summary.json").read_text())
        assert 1.5 <= summary["newton"]["mean"] <= 3.5
        assert summary["newton"]["max"] <= 5

    def test_worker_invariance(self, pillbox_uq_run):
        _, out, cfg, tmp = pillbox_uq_run
        out2 = tmp / "run2"
        assert cli.main(["uq", "--config", cfg, "--out", str(out2), "--workers", "2"]) == 0
        for name in ("moments.csv", "mode_table.csv", "grid.csv"):
            assert (out / name).read_bytes() == (out2 / name).read_bytes()

    def test_zero_variance_distribution(self, tmp_path):
        doc = json.loads(json.dumps(PILLBOX_UQ))
        doc["problem"]["distribution"]["support"] = [0.05, 0.05]
        doc["grid"] = {"kind": "tensor", "family": "clenshaw-curtis", "orders": [1]}
        cfg = write_config(tmp_path, "c.json", doc)
        out = tmp_path / "run"
        assert cli.main(["uq", "--config", cfg, "--out", str(out)]) == 0
        rows = read_csv(out / "moments.csv")
        for row in rows[1:]:
            assert float(row[5]) == 0.0
            assert float(row[4]) == pytest.approx(float(row[3]), rel=1e-14)


class TestDeformedDiskUq:
    def test_synthetic_pipeline(self, tmp_path, capsys):
        doc = {
            "problem": {
                "kind": "deformed-disk",
                "radius": 0.05,
                "criterion": 0.95,
                "synthetic": {"variables": 18, "samples": 5000, "seed": 1234},
            },
            "discretization": {"degree": 2, "refinement": 2},
            "modes": 1,
            "grid": {"kind": "smolyak", "family": "gauss-hermite", "level": 1},
        }
        cfg = write_config(tmp_path, "c.json", doc)
        out = tmp_path / "run"
        assert cli.main(["uq", "--config", cfg, "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "18 variables -> 7 retained" in printed
        assert "collocation nodes: 15" in printed
        summary = json.loads((out / "summary.json").read_text())
        assert summary["retained_variables"] == 7
        assert summary["nodes"] == 15
        rows = read_csv(out / "moments.csv")
        base_f, mean_f, sd_f = (float(v) for v in rows[1][3:6])
        # fundamental of the mean-shape disk sits near the analytic value
        f_ref = oracle.C0 * oracle.bessel_zero(0, 1) / (2.0 * math.pi * 0.05)
        assert abs(base_f - f_ref) / f_ref < 5e-3
        assert abs(mean_f - base_f) / base_f < 5e-3
        assert 0.0 < sd_f < 0.05 * base_f


class TestBench:
    def test_tracking_beats_direct(self, tmp_path):
        cfg = write_config(tmp_path, "c.json", PILLBOX_UQ)
        out = tmp_path / "b1"
        assert cli.main(["bench", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "bench.json").read_text())
        assert doc["tracked"]["per_mode_point"] < doc["direct"]["per_mode_point"]
        assert doc["solve_ratio"] > 1.0

        out2 = tmp_path / "b2"
        assert cli.main(["bench", "--config", cfg, "--out", str(out2)]) == 0
        doc2 = json.loads((out2 / "bench.json").read_text())
        assert doc2["tracked"]["total_solves"] == doc["tracked"]["total_solves"]
        assert doc2["direct"]["solves_per_node"] == doc["direct"]["solves_per_node"]

    def test_single_node_grid(self, tmp_path):
        doc = json.loads(json.dumps(PILLBOX_UQ))
        doc["problem"]["distribution"]["support"] = [0.05, 0.05]
        doc["grid"] = {"kind": "tensor", "family": "clenshaw-curtis", "orders": [1]}
        doc["modes"] = 2
        cfg = write_config(tmp_path, "c.json", doc)
        out = tmp_path / "b"
        assert cli.main(["bench", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "bench.json").read_text())
        assert doc["solve_ratio"] == pytest.approx(1.0)
        assert doc["tracked"]["per_mode_point"] is None


class TestParser:
    def test_requires_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == 2

    def test_requires_config_flag(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["uq"])
        assert exc.value.code == 2
