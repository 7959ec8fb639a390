import json
import os

import numpy as np
import pytest

from eolab.cli import main


def _write_config(tmp_path, **overrides):
    doc = {
        "problem": "shifted-gaussian-mean",
        "procedures": [
            {"kind": "eo", "label": "eo"},
            {"kind": "regularized", "label": "ridge",
             "lambda": {"rule": "a_over_sqrt_n", "a": 1.0}},
        ],
        "n_grid": [100, 400],
        "replications": 40,
        "seed": 5,
    }
    doc.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return str(path)


class TestRun:
    def test_produces_csv(self, tmp_path, capsys):
        cfg = _write_config(tmp_path)
        out = tmp_path / "report.csv"
        assert main(["run", cfg, "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("problem,procedure,n,lambda,rep,gap,scaled_gap,converged,iters\n")
        # one summary line per (procedure, n)
        printed = capsys.readouterr().out
        assert printed.count("n=100") == 2 and printed.count("n=400") == 2

    def test_seed_override_deterministic(self, tmp_path):
        cfg = _write_config(tmp_path)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(["run", cfg, "--seed", "42", "--out", str(a)]) == 0
        assert main(["run", cfg, "--seed", "42", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_config_usage_error(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == 2

    def test_malformed_config_usage_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["run", str(path)]) == 2

    def test_invalid_config_usage_error(self, tmp_path):
        cfg = _write_config(tmp_path, replications=1)
        assert main(["run", cfg]) == 2

    def test_json_format(self, tmp_path):
        cfg = _write_config(tmp_path, n_grid=[100], replications=10)
        out = tmp_path / "report.json"
        assert main(["run", cfg, "--out", str(out), "--format", "json"]) == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "eolab-report-1"


class TestDominance:
    def _files(self, tmp_path, a, b):
        fa, fb = tmp_path / "a.txt", tmp_path / "b.txt"
        fa.write_text("\n".join(str(v) for v in a) + "\n")
        fb.write_text("\n".join(str(v) for v in b) + "\n")
        return str(fa), str(fb)

    def test_self_dominated(self, tmp_path, capsys):
        fa, fb = self._files(tmp_path, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
        assert main(["dominance", fa, fb]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["verdict"] == "dominated"

    def test_ordered_pair(self, tmp_path):
        # replicated two-point samples keep the stop-loss bands tight
        fa, fb = self._files(tmp_path, [0.0, 1.0] * 200, [0.0, 2.0] * 200)
        assert main(["dominance", fa, fb]) == 0
        assert main(["dominance", fb, fa]) == 1

    def test_unreadable_input(self, tmp_path):
        assert main(["dominance", str(tmp_path / "x"), str(tmp_path / "y")]) == 2

    def test_garbage_input(self, tmp_path):
        f = tmp_path / "bad.txt"
        f.write_text("one\ntwo\n")
        assert main(["dominance", str(f), str(f)]) == 2


class TestVerify:
    def test_conjugates(self, capsys):
        assert main(["verify", "--suite", "conjugates"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 6

    def test_gradients_single_problem(self, capsys):
        assert main(["verify", "--suite", "gradients", "--problem", "logistic-1d"]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_unknown_problem_fails(self):
        assert main(["verify", "--suite", "gradients", "--problem", "nope"]) == 1

    def test_unknown_suite_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(["verify", "--suite", "everything"])
        assert err.value.code == 2


class TestListProblems:
    def test_catalog_printed(self, capsys):
        assert main(["list-problems"]) == 0
        out = capsys.readouterr().out.split()
        assert "gaussian-mean" in out and "logistic-1d" in out


class TestReport:
    def test_renders_figures(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, n_grid=[100], replications=20)
        out = tmp_path / "r.csv"
        assert main(["run", cfg, "--out", str(out)]) == 0
        figdir = tmp_path / "figs"
        assert main(["report", str(out), "--out-dir", str(figdir)]) == 0
        produced = sorted(os.listdir(figdir))
        assert produced == ["r-gap-hist.png", "r-medians.png", "r-summary.txt"]
        assert (figdir / "r-gap-hist.png").stat().st_size > 0

    def test_unreadable_csv(self, tmp_path):
        assert main(["report", str(tmp_path / "missing.csv")]) == 2

    def test_wrong_columns(self, tmp_path):
        f = tmp_path / "odd.csv"
        f.write_text("a,b,c\n1,2,3\n")
        assert main(["report", str(f)]) == 2


class TestUsage:
    @pytest.mark.parametrize("sub", ["run", "dominance", "verify", "report"])
    def test_help_exits_zero(self, sub):
        with pytest.raises(SystemExit) as err:
            main([sub, "--help"])
        assert err.value.code == 0

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit) as err:
            main(["list-problems", "--frobnicate"])
        assert err.value.code == 2

    def test_no_command_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2
