import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from ldpfreq.cli import build_parser, main

SUBCOMMANDS = {
    "mechanism": ["--a", "--eps", "--variant", "--out"],
    "estimate": ["--mechanism", "--tallies", "--method", "--prior", "--max-iter", "--tol", "--out"],
    "simulate": ["--config", "--out", "--seed", "--threads"],
    "real": ["--config", "--out", "--seed", "--threads", "--data", "--column", "--bins", "--delimiter"],
    "bounds": ["--mechanism", "--prior", "--samples", "--seed", "--n", "--out"],
    "posterior": ["--mechanism", "--prior", "--tallies", "--mse-n", "--out"],
}


@pytest.mark.parametrize("cmd", sorted(SUBCOMMANDS))
def test_help_lists_flags(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in SUBCOMMANDS[cmd]:
        assert flag in out


def test_parser_defines_exactly_these_flags():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, flags in SUBCOMMANDS.items():
        defined = {s for a in sub.choices[name]._actions for s in a.option_strings if s.startswith("--")}
        assert defined - {"--help"} == set(flags)


def test_mechanism_rr(tmp_path, capsys):
    out = tmp_path / "q.csv"
    assert main(["mechanism", "rr", "--a", "2", "--eps", "1", "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == "epsilon=1.000000"
    q = np.loadtxt(out, delimiter=",")
    e = np.e
    np.testing.assert_allclose(q, [[e / (e + 1), 1 / (e + 1)], [1 / (e + 1), e / (e + 1)]])


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_estimate_outputs(tmp_path):
    tallies = _write(tmp_path / "s.csv", "index,count\n0,30\n1,10\n2,5\n")
    out = tmp_path / "est"
    assert main(["estimate", "--mechanism", "rr:3,1", "--tallies", tallies, "--method", "mle",
                 "--out", str(out)]) == 0
    header = (out / "estimate.csv").read_text().splitlines()[0]
    assert header == "index,prob"
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"estimate", "projected", "estimator", "objective", "iterations",
                           "converged", "epsilon", "n"}
    assert report["n"] == 45


@pytest.mark.parametrize("method", ["fo", "normsub", "mle", "rr-exact", "posterior"])
def test_estimate_methods(tmp_path, capsys, method):
    tallies = _write(tmp_path / "s.csv", "index,count\n0,3\n1,1\n")
    assert main(["estimate", "--mechanism", "rr:2,1", "--tallies", tallies, "--method", method]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,prob" and len(lines) == 3


def test_estimate_with_matrix_file(tmp_path, capsys):
    q = _write(tmp_path / "q.csv", "0.7,0.2\n0.2,0.3\n0.1,0.5\n")
    tallies = _write(tmp_path / "s.csv", "index,count\n0,10\n1,5\n2,7\n")
    assert main(["estimate", "--mechanism", q, "--tallies", tallies, "--method", "fo"]) == 0


def test_missing_file_exit_1(tmp_path, capsys):
    code = main(["estimate", "--mechanism", "rr:2,1", "--tallies", str(tmp_path / "none.csv")])
    assert code == 1
    assert "file not found" in capsys.readouterr().err


def test_invalid_matrix_exit_1(tmp_path, capsys):
    q = _write(tmp_path / "q.csv", "0.5,0.5\n0.5,0.5\n")
    tallies = _write(tmp_path / "s.csv", "index,count\n0,1\n1,1\n")
    assert main(["estimate", "--mechanism", q, "--tallies", tallies]) == 1
    assert "invalid input" in capsys.readouterr().err


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--bogus"])
    assert exc.value.code == 2
    assert main(["bounds", "--mechanism", "rr:2,1", "--samples", "200"]) == 2
    assert "seed" in capsys.readouterr().err
    assert main(["bounds", "--mechanism", "rr:2", "--seed", "1"]) == 2


def test_bounds_json(tmp_path, capsys):
    assert main(["bounds", "--mechanism", "rr:2,1", "--prior", "jeffreys", "--samples", "500",
                 "--seed", "7", "--n", "1000", "--out", str(tmp_path)]) == 0
    assert "seed=7" in capsys.readouterr().err
    data = json.loads((tmp_path / "bounds.json").read_text())
    assert set(data) == {
        "gamma_mu", "gamma_mu_stderr", "delta_mu", "delta_mu_stderr", "mc_samples",
        "rejected_samples", "epsilon", "eps_bound_gamma", "eps_bound_delta", "mse_lower_distr",
        "mse_lower_freq", "linalg_bound_distr", "linalg_bound_freq", "linalg_bound_distr_stderr",
        "linalg_bound_freq_stderr", "n",
    }


def test_posterior_json(tmp_path, capsys):
    tallies = _write(tmp_path / "s.csv", "index,count\n0,2\n1,1\n")
    assert main(["posterior", "--mechanism", "rr:2,1", "--tallies", tallies, "--mse-n", "3"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert set(data) == {"mean", "frequency_mean", "posterior_variance", "log_normalizer", "terms",
                         "mse_n", "mse_distr"}


def _md5(path):
    return hashlib.md5(path.read_bytes()).hexdigest()


def test_simulate_rerun_byte_identical(tmp_path, capsys):
    cfg = _write(tmp_path / "exp.json", json.dumps(
        {"mechanism": "rr", "a": 3, "epsilons": [1.0], "n": 100, "trials": 3, "seed": 5}))
    for run in ("r1", "r2"):
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / run)]) == 0
    assert _md5(tmp_path / "r1" / "sweep.csv") == _md5(tmp_path / "r2" / "sweep.csv")
    assert (tmp_path / "r1" / "sweep.csv").read_text().splitlines()[0] == \
        "epsilon,estimator,target,mean_mse,stderr,trials,excluded"
    assert "seed=5" in capsys.readouterr().err


def test_simulate_requires_seed(tmp_path):
    cfg = _write(tmp_path / "exp.json", json.dumps({"a": 2, "epsilons": [1.0], "n": 10, "trials": 1}))
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_real_subcommand(tmp_path):
    data = _write(tmp_path / "d.csv", "city\nA\nB\nA\nC\n\nA\n")
    cfg = _write(tmp_path / "exp.json", json.dumps({"epsilons": [1.0], "trials": 2, "estimators": ["fo"]}))
    out = tmp_path / "o"
    assert main(["real", "--config", cfg, "--out", str(out), "--seed", "1", "--data", data,
                 "--column", "city"]) == 0
    manifest = json.loads((out / "real_manifest.json").read_text())
    assert manifest["mapping"] == {"A": 0, "B": 1, "C": 2}
    assert manifest["invalid"] == 1
    assert (out / "tally.csv").read_text() == "index,count\n0,3\n1,1\n2,1\n"


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "ldpfreq.cli", "mechanism", "ue", "--a", "2",
                           "--eps", "1"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.strip().splitlines()[-1] == "epsilon=1.000000"
