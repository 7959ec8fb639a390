import json
import math

import numpy as np
import pytest

from eolab import asymptotics
from eolab.divergence import get_divergence
from eolab.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    FailureBudgetError,
    HarnessError,
    LambdaRule,
    ProcedureEntry,
    Report,
    estimate_disappointment,
    read_report,
    report_to_csv,
    run_experiment,
    write_report,
)
from eolab.model import get_problem
from eolab.solvers import SolverError


def _entry(kind, rule=None, label=None, **kw):
    rule = rule or LambdaRule("constant", 0.0)
    return ProcedureEntry(label=label or kind, kind=kind, rule=rule, **kw)


def _small_config(**overrides):
    base = dict(
        problem="shifted-gaussian-mean",
        procedures=(
            _entry("eo"),
            _entry("regularized", LambdaRule("a_over_sqrt_n", 1.0), "ridge-a1"),
        ),
        n_grid=(100, 400),
        replications=50,
        seed=7,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestLambdaRule:
    def test_constant(self):
        r = LambdaRule("constant", 0.05)
        assert r.resolve(100) == 0.05
        assert r.a == math.inf

    def test_zero_constant_is_case1(self):
        assert LambdaRule("constant", 0.0).a == 0.0

    def test_a_over_sqrt_n(self):
        r = LambdaRule("a_over_sqrt_n", 2.0)
        assert r.resolve(400) == pytest.approx(0.1)
        assert r.a == 2.0

    def test_power(self):
        r = LambdaRule("power", 0.25)
        assert r.resolve(16) == pytest.approx(0.5)
        assert r.a == math.inf
        assert LambdaRule("power", 0.75).a == 0.0
        assert LambdaRule("power", 0.5).a == 1.0

    def test_round_trip(self):
        for r in (LambdaRule("constant", 0.1), LambdaRule("a_over_sqrt_n", 1.5),
                  LambdaRule("power", 0.25)):
            assert LambdaRule.from_json(r.to_json()) == r

    def test_scalar_shorthand(self):
        assert LambdaRule.from_json(0.3) == LambdaRule("constant", 0.3)

    def test_unknown_rule_rejected(self):
        with pytest.raises(HarnessError):
            LambdaRule("exponential", 1.0)


class TestConfigValidation:
    def test_replications_floor(self):
        with pytest.raises(HarnessError):
            _small_config(replications=1)

    def test_n_grid_must_increase(self):
        with pytest.raises(HarnessError):
            _small_config(n_grid=(400, 100))

    def test_duplicate_labels_rejected(self):
        with pytest.raises(HarnessError):
            _small_config(procedures=(_entry("eo"), _entry("eo")))

    def test_json_round_trip(self):
        cfg = _small_config()
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again.to_json() == cfg.to_json()
        assert again.hash() == cfg.hash()


class TestRunExperiment:
    def test_eo_only_has_no_verdicts(self):
        cfg = _small_config(procedures=(_entry("eo"),))
        report = run_experiment(cfg)
        assert report.verdicts == ()
        assert {c["procedure"] for c in report.cells} == {"eo"}
        assert len(report.rows) == 2 * 50

    def test_paired_baseline_added_when_missing(self):
        cfg = _small_config(procedures=(
            _entry("regularized", LambdaRule("a_over_sqrt_n", 1.0), "ridge"),))
        report = run_experiment(cfg)
        labels = {c["procedure"] for c in report.cells}
        assert "eo" in labels and "ridge" in labels
        assert any(v["procedure"] == "ridge" for v in report.verdicts)

    def test_determinism_across_jobs(self):
        cfg = _small_config()
        a = report_to_csv(run_experiment(cfg, jobs=1))
        b = report_to_csv(run_experiment(cfg, jobs=4))
        assert a == b

    def test_case2_flagged_as_blowup(self):
        cfg = _small_config(procedures=(
            _entry("eo"),
            _entry("regularized", LambdaRule("power", 0.25), "ridge-heavy"),
        ), n_grid=(100, 400, 1600), replications=200)
        report = run_experiment(cfg)
        per_n = [v for v in report.verdicts
                 if v["procedure"] == "ridge-heavy" and v["n"] is not None]
        assert all(v["verdict"] == "blow-up" for v in per_n)
        summary = [v for v in report.verdicts
                   if v["procedure"] == "ridge-heavy" and v["n"] is None]
        assert len(summary) == 1 and "median_ratios" in summary[0]

    def test_degenerate_bias_is_inconclusive(self):
        cfg = ExperimentConfig(
            problem="gaussian-mean",   # zero mean: ridge K = 0
            procedures=(_entry("eo"),
                        _entry("regularized", LambdaRule("a_over_sqrt_n", 1.0), "ridge")),
            n_grid=(100,), replications=50, seed=3)
        report = run_experiment(cfg)
        assert all(v["verdict"] == "inconclusive" for v in report.verdicts)

    def test_failure_budget_enforced(self, monkeypatch):
        def boom(*args, **kwargs):
            raise SolverError("synthetic failure")
        monkeypatch.setattr(asymptotics, "solve", boom)
        with pytest.raises(FailureBudgetError) as err:
            run_experiment(_small_config(n_grid=(100,)))
        assert err.value.report is not None
        assert all(c["failures"] == 50 for c in err.value.report.cells)


class TestReportSerialization:
    def _tiny_report(self, rows):
        return Report(schema="eolab-report-1", config={}, config_hash="x",
                      rows=tuple(rows), cells=(), verdicts=())

    def test_csv_header_exact(self):
        text = report_to_csv(self._tiny_report([]))
        assert text == "problem,procedure,n,lambda,rep,gap,scaled_gap,converged,iters\n"

    def test_single_row_two_lines(self):
        row = {"problem": "p", "procedure": "eo", "n": 10, "lambda": 0.0,
               "rep": 0, "gap": 0.5, "scaled_gap": 5.0, "converged": True, "iters": 2}
        text = report_to_csv(self._tiny_report([row]))
        lines = text.splitlines()
        assert len(lines) == 2
        assert text.endswith("\n")

    def test_failed_replication_blank_gap(self):
        row = {"problem": "p", "procedure": "eo", "n": 10, "lambda": 0.0,
               "rep": 0, "gap": None, "scaled_gap": None, "converged": False, "iters": 0}
        line = report_to_csv(self._tiny_report([row])).splitlines()[1]
        assert line == "p,eo,10,0.0,0,,,false,0"

    def test_json_round_trip(self, tmp_path):
        report = run_experiment(_small_config(n_grid=(100,), replications=10))
        path = tmp_path / "report.json"
        write_report(report, str(path), "json")
        again = read_report(str(path))
        assert again.to_json() == report.to_json()

    def test_csv_written_with_trailing_newline(self, tmp_path):
        report = run_experiment(_small_config(n_grid=(100,), replications=5))
        path = tmp_path / "report.csv"
        write_report(report, str(path), "csv")
        data = path.read_bytes()
        assert data.endswith(b"\n")
        header = data.split(b"\n", 1)[0].decode()
        assert header == ",".join(CSV_COLUMNS)

    def test_unknown_format_rejected(self, tmp_path):
        report = self._tiny_report([])
        with pytest.raises(HarnessError):
            write_report(report, str(tmp_path / "x"), "parquet")


class TestDisappointment:
    def test_positive_at_zero_lambda(self):
        p = get_problem("logistic-1d")
        out = estimate_disappointment(p, get_divergence("chi2"), 0.0,
                                      n=100, replications=300, seed=1)
        assert out["estimate"] > 0
        assert out["se"] > 0

    def test_large_lambda_drives_to_zero(self):
        p = get_problem("logistic-1d")
        lo = estimate_disappointment(p, get_divergence("chi2"), 0.1,
                                     n=100, replications=200, seed=2)
        hi = estimate_disappointment(p, get_divergence("chi2"), 0.0,
                                     n=100, replications=200, seed=2)
        assert lo["estimate"] <= hi["estimate"]
