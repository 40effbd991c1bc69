import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dbot.cli import main, parse_args
from dbot.classify import balanced_softmax_loss, softmax_cross_entropy

FIX = Path(__file__).parent / "fixtures"


def fx(name):
    return str(FIX / name)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def solve_args(lower="lower_2x2.csv", upper="upper_2x2.csv", cost="cost_uniform.csv"):
    return ["solve", fx(cost), fx("source_2x2.csv"), fx(lower), fx(upper), "--no-timestamp"]


class TestSolve:
    def test_uniform(self, capsys):
        code, out, _ = run(solve_args(), capsys)
        assert code == 0
        np.testing.assert_allclose(json.loads(out)["coupling"], np.full((2, 2), 0.25))

    def test_all_variants(self, tmp_path, capsys):
        target = tmp_path / "sol.json"
        code, _, _ = run(solve_args("lower_active.csv", "upper_inf.csv", "cost_2x2.csv")
                         + ["--variant", "all", "-o", target], capsys)
        assert code == 0
        report = json.loads(target.read_text())
        assert report["max_diff"] <= 1e-6
        assert len(report["pairwise_max_diff"]) == 3
        for variant in ("bregman", "sinkhorn_knopp", "dual"):
            assert json.loads((tmp_path / f"sol.{variant}.json").read_text())["variant"] == variant

    def test_lower_above_upper(self, capsys):
        code, _, err = run(solve_args("lower_bad.csv", "upper_bad.csv"), capsys)
        assert code == 1
        assert "bounds: lower exceeds upper at index 0" in err

    def test_malformed_csv(self, capsys):
        code, _, err = run(solve_args(cost="cost_malformed.csv"), capsys)
        assert code == 1
        assert "line 2, column 2" in err

    def test_ragged_csv(self, capsys):
        code, _, err = run(solve_args(cost="cost_ragged.csv"), capsys)
        assert code == 1 and "line 2" in err

    def test_missing_file(self, capsys):
        code, _, _ = run(["solve", "nope.csv", fx("source_2x2.csv"), fx("lower_2x2.csv"), fx("upper_2x2.csv")],
                         capsys)
        assert code == 1

    def test_non_convergence(self, capsys):
        code, out, _ = run(solve_args(cost="cost_2x2.csv") + ["--max-iter", "1", "--epsilon", "0.05"], capsys)
        assert code == 2
        assert json.loads(out)["converged"] is False

    def test_bad_flag_value(self, capsys):
        assert run(solve_args() + ["--epsilon", "-1"], capsys)[0] == 1
        assert run(solve_args() + ["--variant", "magic"], capsys)[0] == 1
        assert run(["solve"], capsys)[0] == 1
        assert run(["frobnicate"], capsys)[0] == 1

    def test_timestamp(self, capsys):
        out = run(solve_args()[:-1], capsys)[1]
        assert "timestamp" in json.loads(out)


class TestConfig:
    def test_file_then_flags(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# solver settings\nepsilon = 0.5\n--max-iter = 77\nno_timestamp = true\n")
        base = solve_args()[:-1] + ["--config", str(cfg)]
        args = parse_args(base)
        assert (args.epsilon, args.max_iter, args.no_timestamp) == (0.5, 77, True)
        args = parse_args(base + ["--epsilon", "2"])
        assert args.epsilon == 2.0 and args.max_iter == 77

    @pytest.mark.parametrize("text", ["bogus = 1\n", "epsilon = -3\n", "no_timestamp = maybe\n", "epsilon\n"])
    def test_bad_config(self, tmp_path, capsys, text):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(text)
        code, _, err = run(solve_args() + ["--config", cfg], capsys)
        assert code == 1 and "line 1" in err


class TestCluster:
    def test_five_gaussians(self, capsys):
        code, out, _ = run(["cluster", fx("blobs5_points.csv"), "--k", 5, "--lower", 20, "--upper", 40,
                            "--epsilon", 0.2, "--labels", fx("blobs5_labels.csv"), "--no-timestamp"], capsys)
        assert code == 0
        doc = json.loads(out)
        assert doc["purity"] >= 0.95
        mass = np.array(doc["per_cluster_mass"])
        assert np.all(mass >= 20 - 1e-6) and np.all(mass <= 40 + 1e-6)

    def test_balanced_upper(self, capsys):
        code, out, _ = run(["cluster", fx("blobs5_points.csv"), "--k", 5, "--upper", 30,
                            "--epsilon", 0.05, "--no-timestamp"], capsys)
        assert code == 0
        mass = np.array(json.loads(out)["per_cluster_mass"])
        # rows are each within 1e-9*S of unit mass, so the total may drift by S times that
        tol = 1e-9 * 150
        assert np.all(mass <= 30 + tol)
        assert abs(mass.sum() - 150) <= 150 * tol
        np.testing.assert_allclose(mass, 30, atol=150 * tol)

    def test_wasserstein_two_bins(self, capsys):
        code, out, _ = run(["cluster", fx("two_bin_hist.json"), "--k", 1, "--space", "wasserstein",
                            "--no-timestamp"], capsys)
        assert code == 0
        np.testing.assert_allclose(json.loads(out)["centroids"], [[0.5, 0.5]], atol=1e-9)

    def test_errors(self, capsys):
        assert run(["cluster", fx("blobs5_points.csv")], capsys)[0] == 1
        code, _, err = run(["cluster", fx("blobs5_points.csv"), "--k", 5, "--lower", 40], capsys)
        assert code == 1 and "cannot hold" in err
        assert run(["cluster", fx("blobs5_points.csv"), "--k", 2, "--upper", "1,2,3"], capsys)[0] == 1


class TestInfer:
    def test_identity(self, capsys):
        code, out, _ = run(["infer", fx("logits_diag3.csv"), "--prior", fx("prior_uniform3.csv")], capsys)
        assert code == 0 and out.split() == ["0", "1", "2"]

    def test_margin_flip_with_diagnostics(self, tmp_path, capsys):
        diag = tmp_path / "d.json"
        code, out, _ = run(["infer", fx("logits_flip.csv"), "--prior", fx("prior_uniform.csv"), "--delta", 0,
                            "--diagnostics", diag, "--no-timestamp"], capsys)
        assert code == 0 and out.split() == ["0", "1"]
        doc = json.loads(diag.read_text())
        np.testing.assert_allclose(doc["column_mass"], [0.5, 0.5], atol=1e-9)
        assert doc["max_bound_violation"] <= 1e-9

    def test_logit_adjust(self, capsys):
        code, out, _ = run(["infer", fx("logits_la.csv"), "--baseline", "logit-adjust",
                            "--counts", fx("counts_la.csv"), "--tau", 1], capsys)
        assert code == 0 and out.split() == ["1"]

    def test_dimension_mismatch(self, capsys):
        code, _, err = run(["infer", fx("logits_flip.csv"), "--prior", fx("prior_bad_dim.csv")], capsys)
        assert code == 1 and "classes" in err

    def test_missing_prior(self, capsys):
        assert run(["infer", fx("logits_flip.csv")], capsys)[0] == 1


class TestLoss:
    def test_uniform_prior(self, capsys):
        code, out, _ = run(["loss", fx("logits_flip.csv"), fx("label_pair.csv"), "--no-timestamp"], capsys)
        assert code == 0
        expected = softmax_cross_entropy([[2, 1], [1.9, 1]], [0, 1])
        assert json.loads(out)["loss"] == pytest.approx(expected, abs=1e-12)

    def test_long_tail_prior(self, capsys):
        code, out, _ = run(["loss", fx("logits_row.csv"), fx("label_one.csv"), "--prior", fx("prior_lt.csv"),
                            "--no-timestamp"], capsys)
        assert code == 0
        assert json.loads(out)["loss"] == pytest.approx(balanced_softmax_loss([[0, 0]], [1], [0.75, 0.25]))
        assert json.loads(out)["loss"] == pytest.approx(np.log(4))

    def test_fd_check_and_grad(self, tmp_path, capsys):
        grad = tmp_path / "g.csv"
        code, out, _ = run(["loss", fx("logits_flip.csv"), fx("label_pair.csv"), "--prior", fx("prior_lt.csv"),
                            "--delta", 0.2, "--k-iters", 3, "--fd-check", "--grad", grad], capsys)
        assert code == 0
        assert json.loads(out)["fd_max_rel_error"] <= 1e-5
        assert np.loadtxt(grad, delimiter=",").shape == (2, 2)

    def test_zero_prior_label(self, tmp_path, capsys):
        prior = tmp_path / "r.csv"
        prior.write_text("1,0\n")
        code, _, err = run(["loss", fx("logits_row.csv"), fx("label_one.csv"), "--prior", prior], capsys)
        assert code == 1 and "infinite" in err


def test_compare(capsys):
    code, out, _ = run(["compare", fx("cost_2x2.csv"), fx("source_2x2.csv"), fx("lower_active.csv"),
                        fx("upper_inf.csv"), "--no-timestamp"], capsys)
    assert code == 0
    assert json.loads(out)["max_gap"] <= 1e-9


class TestSweep:
    def test_empty_grid(self, capsys):
        code, _, err = run(["sweep", "--param", "delta", "--grid", ""], capsys)
        assert code == 1 and "grid must be nonempty" in err

    def test_invalid_grid_value(self, capsys):
        assert run(["sweep", "--param", "delta", "--grid", "0.5,1.5"], capsys)[0] == 1
        assert run(["sweep", "--param", "k-iters", "--grid", "1.5"], capsys)[0] == 1

    def test_delta_rows_in_grid_order(self, capsys):
        code, out, _ = run(["sweep", "--param", "delta", "--grid", "0.4,0,0.1", "--epochs", 20], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "param,value,seed,split,metric,score"
        assert [l.split(",")[1] for l in lines[1::9]] == ["0.4", "0", "0.1"]

    def test_workers_do_not_change_output(self, capsys):
        argv = ["sweep", "--param", "k-iters", "--grid", "1,2", "--epochs", 20]
        serial = run(argv, capsys)[1]
        parallel = run(argv + ["--workers", 2], capsys)[1]
        assert serial == parallel

    def test_bounds(self, capsys):
        code, out, _ = run(["sweep", "--param", "bounds", "--grid", "0.2", "--seeds", 2], capsys)
        assert code == 0
        assert len(out.strip().splitlines()) == 1 + 2 * 3


def _subprocess(args, env_extra=None):
    env = dict(os.environ, **(env_extra or {}))
    return subprocess.run([sys.executable, "-m", "dbot", *args], capture_output=True, text=True, env=env)


def test_module_entry_point_and_log_level():
    args = solve_args(cost="cost_2x2.csv") + ["--max-iter", "1", "--epsilon", "0.05"]
    quiet = _subprocess(args, {"DBOT_LOG": "error"})
    loud = _subprocess(args, {"DBOT_LOG": "warn"})
    assert quiet.returncode == loud.returncode == 2
    assert quiet.stderr == ""
    assert "did not converge" in loud.stderr
    assert quiet.stdout == loud.stdout


def test_byte_identical_reruns():
    args = ["cluster", fx("blobs5_points.csv"), "--k", "5", "--lower", "20", "--upper", "40",
            "--epsilon", "0.2", "--seed", "3", "--no-timestamp"]
    first, second = _subprocess(args), _subprocess(args)
    assert first.returncode == 0
    assert first.stdout == second.stdout
