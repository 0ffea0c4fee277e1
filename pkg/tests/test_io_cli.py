"""CSV ingestion, configuration handling and the command-line surface."""

import json
import math

import numpy as np
import pytest

from qsbs import cli, io
from qsbs.em import FitResult
from qsbs.errors import DataError, ParameterError, RankDeficiencyError
from qsbs.smn import FamilyKind, MixtureFamily

from conftest import simulate_regression

T_FLAGS = ["--family", "t", "--nu-grid", "4,11"]


def write_rows(path, header, rows):
    lines = [",".join(header)] + [",".join(str(c) for c in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    ds = simulate_regression(MixtureFamily.student_t(5), 0.4, (1.0, 1.0, 0.6), 120, 0.5, seed=17)
    rows = [(repr(float(t)), repr(float(a)), repr(float(b))) for t, (a, b) in zip(ds.responses, ds.design[:, 1:])]
    return write_rows(tmp_path_factory.mktemp("data") / "sample.csv", ("y", "x1", "x2"), rows)


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    err = capsys.readouterr().err if capsys is not None else ""
    return code, err


class TestIngest:
    def test_summary(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 0.1), (2, 0.5), (3, 0.2), (10, 0.9)])
        ds, s = io.ingest_csv(p, "amount", ["optime"])
        assert ds.column_names == ("intercept", "optime")
        assert s["n"] == 4 and s["MN"] == 4.0 and s["MD"] == 2.5
        assert s["range"] == 9.0 and s["CV"] == pytest.approx(np.std([1, 2, 3, 10], ddof=1) / 4)

    def test_missing_column(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 2)] * 4)
        with pytest.raises(DataError, match="legrep"):
            io.ingest_csv(p, "amount", ["legrep"])

    def test_duplicate_request(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 2)] * 4)
        with pytest.raises(DataError, match="more than once"):
            io.ingest_csv(p, "amount", ["optime", "optime"])

    def test_duplicated_column_is_rank_deficient(self, tmp_path):
        rows = [(i + 1, 0.1 * i, 0.1 * i) for i in range(6)]
        p = write_rows(tmp_path / "a.csv", ("amount", "optime", "copy"), rows)
        with pytest.raises(RankDeficiencyError) as info:
            io.ingest_csv(p, "amount", ["optime", "copy"])
        assert set(info.value.columns) == {"optime", "copy"}

    def test_missing_value_line(self, tmp_path):
        rows = [(1, 0.1), (2, "NA"), (3, 0.3), (4, "")]
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), rows)
        with pytest.raises(DataError, match=r"\[3, 5\]"):
            io.ingest_csv(p, "amount", ["optime"])

    def test_non_numeric(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 0.1), (2, "abc"), (3, 0.3)])
        with pytest.raises(DataError, match="line 3, column 'optime'"):
            io.ingest_csv(p, "amount", ["optime"])

    def test_zero_response_names_line(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 0.1), (2, 0.2), (0, 0.3), (4, 0.4)])
        with pytest.raises(DataError, match=r"line\(s\) \[4\]"):
            io.ingest_csv(p, "amount", ["optime"])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            io.ingest_csv(tmp_path / "nope.csv", "amount")

    def test_month_accepted_when_requested(self, tmp_path):
        rows = [(i + 1, (7 * i) % 10, i % 2, 1 + (i % 12)) for i in range(30)]
        p = write_rows(tmp_path / "a.csv", io.INSURANCE_COLUMNS, rows)
        ds, _ = io.ingest_csv(p, "amount", ["optime", "legrep", "month"])
        assert ds.column_names[-1] == "month"
        assert io.validate_insurance_schema(p) == list(io.INSURANCE_COLUMNS)

    def test_schema_validator(self, tmp_path):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 2)])
        with pytest.raises(DataError, match="legrep"):
            io.validate_insurance_schema(p)


class TestParsing:
    def test_floats_and_ranges(self):
        assert io.parse_floats("1, 2.5,") == [1.0, 2.5]
        assert io.parse_floats("2..5") == [2.0, 3.0, 4.0, 5.0]
        np.testing.assert_allclose(io.parse_floats("0.1..0.3/0.1"), [0.1, 0.2, 0.3])
        with pytest.raises(ParameterError):
            io.parse_floats("a")

    def test_nu_grid(self):
        assert io.parse_nu_grid("2,4", FamilyKind.STUDENT_T) == (2.0, 4.0)
        assert io.parse_nu_grid("0.1:0.3,0.2:0.2", FamilyKind.CONTAMINATED_NORMAL) == ((0.1, 0.3), (0.2, 0.2))
        grid = io.parse_nu_grid("0.1,0.2 x 0.3,0.5", FamilyKind.CONTAMINATED_NORMAL)
        assert grid == ((0.1, 0.3), (0.1, 0.5), (0.2, 0.3), (0.2, 0.5))
        assert io.parse_nu_grid("", FamilyKind.STUDENT_T) is None
        with pytest.raises(ParameterError):
            io.parse_nu_grid("0.1", FamilyKind.CONTAMINATED_NORMAL)
        with pytest.raises(ParameterError):
            io.parse_nu_grid("1", FamilyKind.NORMAL)

    def test_formats(self):
        assert io.OutputFormats.parse("json") == io.OutputFormats(True, False, False)
        with pytest.raises(ParameterError):
            io.OutputFormats.parse("png")

    def test_read_config(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\nMax-Iterations = 50\nq = 0.25  # inline\n", encoding="utf-8")
        assert io.read_config(p) == {"max_iterations": "50", "q": "0.25"}
        p.write_text("[study]\nn = 10\n", encoding="utf-8")
        assert io.read_config(p) == {"n": "10"}

    def test_config_hash_ignores_key_order(self):
        assert io.config_hash({"a": 1, "b": 2}) == io.config_hash({"b": 2, "a": 1})
        assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


class TestFit:
    def test_outputs_and_round_trip(self, sample_csv, tmp_path):
        out = tmp_path / "fit"
        code, _ = run(["fit", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS,
                       "--q", "0.25,0.5", "--out", out])
        assert code == 0
        report = json.loads((out / "fit.json").read_text())
        assert [r["q"] for r in report["fits"]] == [0.25, 0.5]
        for rec in report["fits"]:
            fit = FitResult.from_dict(rec["fit"])
            assert fit.theta.alpha == rec["fit"]["alpha"]
            assert fit.theta.beta.tolist() == rec["fit"]["beta"]
            assert rec["nu_hat"][0] in (4.0, 11.0)
        header, rows = io.read_csv_rows(out / "trace_q.csv")
        assert header == ["q", "parameter", "estimate", "se"] and len(rows) == 8
        assert (out / "trace_q.csv").read_text().startswith(f"# config {report['config_hash']}")
        assert "beta[x2]" in (out / "fit.txt").read_text()

    def test_flags_override_config(self, sample_csv, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"data = {sample_csv}\nresponse = y\ncovariates = x1,x2\nfamily = normal\nq = 0.75\n")
        code, _ = run(["fit", "--config", cfg, "--q", "0.5", "--out", tmp_path / "o", "--format", "json"])
        assert code == 0
        report = json.loads((tmp_path / "o" / "fit.json").read_text())
        assert report["fits"][0]["q"] == 0.5 and report["config"]["family"] == "normal"
        assert not (tmp_path / "o" / "fit.txt").exists()

    def test_intercept_only_recovers_log_Q(self, tmp_path):
        from qsbs.distribution import QsbsDistribution, qsbs_sample

        t = qsbs_sample(300, QsbsDistribution(0.4, 5.0, 0.5, MixtureFamily.student_t(11)), 4)
        p = write_rows(tmp_path / "c.csv", ("y",), [(repr(float(v)),) for v in t])
        code, _ = run(["fit", "--data", p, "--response", "y", "--covariates", "", *T_FLAGS, "--out", tmp_path])
        assert code == 0
        f = json.loads((tmp_path / "fit.json").read_text())["fits"][0]["fit"]
        assert abs(f["beta"][0] - math.log(5.0)) < 3 * f["standard_errors"][1]

    def test_predict(self, sample_csv, tmp_path):
        run(["fit", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS, "--out", tmp_path])
        new = write_rows(tmp_path / "new.csv", ("x1", "x2"), [(0.0, 0.0), (0.5, 0.5)])
        code, _ = run(["predict", "--fit", tmp_path / "fit.json", "--data", new, "--covariates", "x1,x2",
                       "--levels", "0.1,0.5,0.9", "--out", tmp_path])
        assert code == 0
        header, rows = io.read_csv_rows(tmp_path / "predictions.csv")
        assert header == ["row", "q", "fitted_quantile", "quantile_0.1", "quantile_0.5", "quantile_0.9"]
        beta0 = json.loads((tmp_path / "fit.json").read_text())["fits"][0]["fit"]["beta"][0]
        assert float(rows[0][2]) == pytest.approx(math.exp(beta0), rel=1e-12)
        for r in rows:
            lo, mid, hi = (float(v) for v in r[3:])
            assert lo < mid < hi
            assert mid == pytest.approx(float(r[2]), rel=1e-9)  # q = 0.5


class TestTestAndResiduals:
    def test_hypotheses(self, sample_csv, tmp_path):
        code, _ = run(["test", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS,
                       "--hypothesis", "x2;x1=1,x2=0.6", "--out", tmp_path])
        assert code == 0
        res = json.loads((tmp_path / "tests.json").read_text())["results"]
        assert [r["hypothesis"] for r in res] == ["x2", "x1=1,x2=0.6"]
        assert res[0]["df"] == 1 and res[1]["df"] == 2
        assert set(res[0]["statistics"]) == {"wald", "score", "lr", "gradient"}
        assert (tmp_path / "tests.txt").exists()

    def test_unknown_hypothesis_column(self, sample_csv, tmp_path, capsys):
        code, err = run(["test", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS,
                         "--hypothesis", "x9", "--out", tmp_path], capsys)
        assert code == 1
        assert "x9" in json.loads(err)["error"]["message"]

    def test_residual_files(self, sample_csv, tmp_path):
        code, _ = run(["residuals", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS,
                       "--bands", "20", "--out", tmp_path])
        assert code == 0
        for kind in ("gcs", "rq"):
            header, rows = io.read_csv_rows(tmp_path / f"envelope_{kind}.csv")
            assert header == ["order", "theoretical", "observed", "lower", "median", "upper"]
            assert len(rows) == 120
        _, rows = io.read_csv_rows(tmp_path / "residuals.csv")
        assert len(rows) == 120
        summary = json.loads((tmp_path / "residuals_summary.json").read_text())
        assert set(summary["summary"]) == {"gcs", "rq"}


class TestSimulate:
    @pytest.mark.parametrize("study", ["estimation", "selection", "tests"])
    def test_smoke(self, study, tmp_path):
        argv = ["simulate", "--study", study, "--replications", "1", "--out", tmp_path, "--seed", "3"]
        cfg = tmp_path / "s.cfg"
        cfg.write_text("n = 60\nnu_grid = t=4,11;slash=2,4;cn=0.1:0.3\n")
        code, _ = run([*argv, "--config", cfg])
        assert code == 0
        report = json.loads((tmp_path / "study_summary.json").read_text())
        assert report["provenance"]["package"] and report["seeds"]["root"] == 3
        assert report["config"]["replications"] == 1 and report["run_config"]["replications"] == "1"
        header, rows = io.read_csv_rows(tmp_path / "study_summary.csv")
        assert header == ["section", "name", "metric", "value"] and rows

    def test_bundled_config_parses(self, tmp_path):
        from importlib import resources

        path = resources.files("qsbs") / "data" / "t11_n200_q050.cfg"
        code, _ = run(["simulate", "--config", path, "--replications", "2", "--out", tmp_path, "--format", "json"])
        assert code == 0
        report = json.loads((tmp_path / "study_summary.json").read_text())
        assert report["config"]["seed"] == 20200 and report["n_used"] == 2

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "s.cfg"
        cfg.write_text("n = 60\nbogus = 1\n")
        code, err = run(["simulate", "--config", cfg, "--out", tmp_path], capsys)
        assert code == 1
        obj = json.loads(err)["error"]
        assert obj["type"] == "ParameterError" and "bogus" in obj["message"]


class TestDeterminism:
    def _twice(self, argv, tmp_path, names):
        for tag in ("a", "b"):
            assert run([*argv, "--out", tmp_path / tag])[0] == 0
        for name in names:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_fit(self, sample_csv, tmp_path):
        argv = ["fit", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS]
        self._twice(argv, tmp_path, ("fit.json", "fit.txt", "trace_q.csv"))

    def test_residuals(self, sample_csv, tmp_path):
        argv = ["residuals", "--data", sample_csv, "--response", "y", "--covariates", "x1,x2", *T_FLAGS,
                "--bands", "10", "--seed", "9"]
        self._twice(argv, tmp_path, ("residuals.csv", "envelope_gcs.csv", "envelope_rq.csv", "residuals_summary.json"))

    def test_simulate(self, tmp_path):
        argv = ["simulate", "--study", "tests", "--replications", "3", "--seed", "5"]
        self._twice(argv, tmp_path, ("study_summary.json", "study_summary.csv"))


class TestErrors:
    def test_missing_data(self, tmp_path, capsys):
        code, err = run(["fit", "--family", "normal", "--out", tmp_path], capsys)
        assert code == 1
        assert json.loads(err)["error"]["type"] == "ParameterError"

    def test_bad_csv_reports_code(self, tmp_path, capsys):
        p = write_rows(tmp_path / "a.csv", ("amount", "optime"), [(1, 0.1), (-2, 0.2), (3, 0.3), (4, 0.5)])
        code, err = run(["fit", "--data", p, "--covariates", "optime", "--family", "normal", "--out", tmp_path], capsys)
        assert code == 1
        obj = json.loads(err)["error"]
        assert obj["type"] == "DataError" and "[3]" in obj["message"] and obj["code"]

    def test_rank_error_lists_columns(self, tmp_path, capsys):
        rows = [(i + 1, 0.1 * i, 0.1 * i) for i in range(6)]
        p = write_rows(tmp_path / "a.csv", ("amount", "a", "b"), rows)
        code, err = run(["fit", "--data", p, "--covariates", "a,b", "--family", "normal", "--out", tmp_path], capsys)
        assert code == 1
        assert set(json.loads(err)["error"]["columns"]) == {"a", "b"}

    def test_bad_q(self, tmp_path, capsys):
        code, err = run(["fit", "--q", "1.5", "--out", tmp_path], capsys)
        assert code == 1 and "q values" in json.loads(err)["error"]["message"]
