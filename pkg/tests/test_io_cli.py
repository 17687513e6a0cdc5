import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from copmeta import io
from copmeta.cli import OUTPUT_ENV, FAMILY_GRID, CliError, RunConfig, example_data_path, main
from copmeta.inference import fit_cl, fit_ml
from copmeta.likelihood import Dataset, Design, ModelSpec, StudyRecord
from copmeta.simulate import SimConfig, replication_rng, simulate_dataset
from copmeta.sroc import density_grid, quantile_curve

HEADER = "study_id,design,tp,diseased,tn,nondiseased\n"


@pytest.fixture(scope="module")
def small_data():
    return simulate_dataset(SimConfig(n_case_control=8, n_cohort=8), replication_rng(21, 0))


@pytest.fixture(scope="module")
def small_fit(small_data):
    return fit_ml(small_data, ModelSpec(cop_cc="clayton90", cop12="clayton0", cop13="clayton90", n_q=11))


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


# ---------------------------------------------------------------------------
# datasets


def test_parse_dataset(tmp_path):
    p = write(tmp_path, HEADER + "a,cc,5,10,8,10\n b , COHORT ,3,4,9,12\n")
    d = io.parse_dataset(p)
    assert d.studies[0] == StudyRecord(Design.CASE_CONTROL, 5, 10, 8, 10, "a")
    co = d.studies[1]
    assert co.design is Design.COHORT and co.study_id == "b"
    assert (co.y3, co.n3) == (4, 16)


def test_columns_may_come_in_any_order(tmp_path):
    p = write(tmp_path, "design,tn,nondiseased,tp,diseased,study_id\ncc,8,10,5,10,x\n")
    assert io.parse_dataset(p).studies[0] == StudyRecord("cc", 5, 10, 8, 10, "x")


@pytest.mark.parametrize("body,message", [
    ("a,cc,5,10,8,10\nb,cc,1,2,3,4\nc,cc,11,10,8,10\n", "tp exceeds diseased at row 3"),
    ("a,cc,5,10,11,10\n", "tn exceeds nondiseased at row 1"),
    ("a,case,5,10,8,10\n", "unknown design 'case' at row 1"),
    ("a,cc,5.5,10,8,10\n", "non-integer tp '5.5' at row 1"),
    ("a,cc,5,,8,10\n", "non-integer diseased '' at row 1"),
    ("a,cc,-1,10,8,10\n", "negative tp at row 1"),
    ("a,cc,0,0,0,0\n", "no participants at row 1"),
    ("", "has no studies"),
])
def test_parse_errors(tmp_path, body, message):
    with pytest.raises(io.ParseError, match=message):
        io.parse_dataset(write(tmp_path, HEADER + body))


def test_parse_missing_column_and_empty_file(tmp_path):
    with pytest.raises(io.ParseError, match="missing column"):
        io.parse_dataset(write(tmp_path, "study_id,design,tp,diseased,tn\na,cc,1,2,3\n"))
    with pytest.raises(io.ParseError, match="empty"):
        io.parse_dataset(write(tmp_path, ""))


def test_dataset_roundtrip(tmp_path, small_data):
    p = tmp_path / "out.csv"
    io.write_dataset(small_data, p)
    assert io.parse_dataset(p) == Dataset(small_data.studies)
    anon = Dataset((StudyRecord("cc", 1, 2, 3, 4), StudyRecord("cohort", 1, 2, 3, 4)))
    io.write_dataset(anon, p)
    assert [s.study_id for s in io.parse_dataset(p).studies] == ["s1", "s2"]


def test_bundled_example_parses():
    d = io.parse_dataset(example_data_path())
    assert (d.n_case_control, d.n_cohort) == (25, 25)


# ---------------------------------------------------------------------------
# reports


def test_fit_report_roundtrip(tmp_path, small_fit):
    p = tmp_path / "fit.json"
    io.write_fit_report(small_fit, p)
    back = io.read_fit_report(p)
    assert back == small_fit
    d = json.loads(p.read_text())
    assert d["schema"] == io.REPORT_SCHEMA
    assert d["model"] == small_fit.spec.name
    tau = d["parameters"]["tau12"]
    assert tau["estimated"] and not tau["fixed_at_zero"]
    assert tau["theta"] > 0


def test_cl_report_marks_fixed_dependence(tmp_path, small_data):
    cl = fit_cl(small_data, n_q=11)
    p = tmp_path / "cl.json"
    io.write_fit_report(cl, p)
    d = json.loads(p.read_text())
    for name in ("tau_cc", "tau12", "tau13"):
        e = d["parameters"][name]
        assert e["fixed_at_zero"] and not e["estimated"] and e["se"] is None and e["estimate"] == 0.0
    assert io.read_fit_report(p) == cl


def test_report_keeps_unavailable_se_and_nonconvergence(tmp_path, small_fit):
    ses = dict(small_fit.std_errors, delta2=float("nan"))
    fit = replace(small_fit, std_errors=ses, converged=False, message="iteration limit")
    p = tmp_path / "bad.json"
    io.write_fit_report(fit, p)
    d = json.loads(p.read_text())
    assert d["convergence"]["converged"] is False
    assert d["parameters"]["delta2"]["se"] is None and d["parameters"]["delta2"]["estimated"]
    back = io.read_fit_report(p)
    assert math.isnan(back.std_errors["delta2"]) and not back.converged


def test_report_schema_checked(tmp_path, small_fit):
    d = io.fit_to_dict(small_fit)
    d["schema"] = "other/9"
    with pytest.raises(io.ParseError):
        io.fit_from_dict(d)


def test_curve_and_grid_files_reingest(tmp_path, small_fit):
    curves = [quantile_curve(small_fit, "cc", q, "x1_of_x2", 11) for q in (0.1, 0.9)]
    io.write_curves(curves, tmp_path / "c.csv")
    rows = io.read_curves(tmp_path / "c.csv")
    assert len(rows) == 22
    assert_allclose([r["x_dependent"] for r in rows[:11]], curves[0].x_dependent, rtol=0)
    g = density_grid(small_fit, "cohort", resolution=50)
    io.write_grid(g, tmp_path / "g.csv")
    cells = io.read_grid(tmp_path / "g.csv")
    assert len(cells) == 2500
    assert_allclose(np.array([c[2] for c in cells]).reshape(50, 50), g.density, rtol=0)


# ---------------------------------------------------------------------------
# command line


def run_cli(*args):
    return main([str(a) for a in args])


def test_simulate_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "--seed", 7, "--out", a) == 0
    assert run_cli("simulate", "--seed", 7, "--out", b) == 0
    assert (a / "dataset.csv").read_bytes() == (b / "dataset.csv").read_bytes()
    assert (a / "dataset_config.json").read_bytes() == (b / "dataset_config.json").read_bytes()


def test_bundled_example_regenerates(tmp_path):
    assert run_cli("simulate", "--seed", 2015, "--out", tmp_path) == 0
    assert (tmp_path / "dataset.csv").read_bytes() == example_data_path().read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert run_cli("simulate", "--truth", "beta", "--n-cc", 3, "--n-cohort", 2) == 0
    cfg = json.loads((tmp_path / "env" / "dataset_config.json").read_text())
    assert cfg["true_margin"] == "beta" and cfg["n_cohort"] == 2


@pytest.mark.parametrize("args", [
    ("fit", "--cop12", "gumbel"),
    ("fit", "--margin", "beta-logit"),
    ("fit", "--nq", "0"),
    ("fit", "--data", "does-not-exist.csv"),
    ("sroc", "--resolution", "10"),
    ("scan", "--copulas", "bvn,bvn"),
])
def test_invalid_configuration_writes_nothing(tmp_path, capsys, args):
    out = tmp_path / "out"
    assert run_cli(*args, "--out", out) == 2
    assert not out.exists()
    assert "error:" in capsys.readouterr().err


def test_validate_reports_readable_errors():
    with pytest.raises(CliError, match="gumbel"):
        RunConfig("fit", cop_cc="gumbel").validate()
    with pytest.raises(CliError, match="unknown command"):
        RunConfig("plot").validate()


def test_fit_sroc_lrt_on_csv(tmp_path, small_data):
    data = tmp_path / "d.csv"
    io.write_dataset(small_data, data)
    model = ("--data", data, "--cop-cc", "clayton90", "--cop12", "clayton0", "--cop13", "clayton90",
             "--nq", 11)
    assert run_cli("fit", *model, "--out", tmp_path) == 0
    fit = io.read_fit_report(tmp_path / "fit.json")
    assert fit.converged and fit.data_hash == small_data.fingerprint

    assert run_cli("sroc", "--report", tmp_path / "fit.json", "--resolution", 60, "--grid-size", 21,
                   "--out", tmp_path / "sroc") == 0
    rows = io.read_curves(tmp_path / "sroc" / "sroc_curves.csv")
    # two blocks, two directions, three quantiles
    assert len(rows) == 2 * 2 * 3 * 21
    extra = json.loads((tmp_path / "sroc" / "sroc_fit.json").read_text())
    assert extra["summary_point"]["sens"] == fit.estimates.pi1
    assert 0.99 <= extra["hdr"]["cc"]["mass"] <= 1.01
    assert len(io.read_grid(tmp_path / "sroc" / "density_cohort.csv")) == 3600

    assert run_cli("lrt", *model, "--out", tmp_path) == 0
    lrt = json.loads((tmp_path / "lrt.json").read_text())
    assert lrt["statistic"] >= 0 and 0 <= lrt["p_value"] <= 1 and lrt["df"] == 3


def test_cl_fit_and_small_scan(tmp_path, small_data):
    data = tmp_path / "d.csv"
    io.write_dataset(small_data, data)
    assert run_cli("cl-fit", "--data", data, "--nq", 11, "--out", tmp_path) == 0
    cl = io.read_fit_report(tmp_path / "cl_fit.json")
    assert cl.method == "cl" and cl.fixed_at_zero == ("tau_cc", "tau12", "tau13")
    assert run_cli("scan", "--data", data, "--nq", 9, "--margins", "normal-logit",
                   "--copulas", "bvn,bvn,bvn;independence,independence,independence", "--out", tmp_path) == 0
    with (tmp_path / "scan.csv").open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["rank"] for r in rows] == ["1", "2"]
    lls = [float(r["loglik"]) for r in rows]
    assert lls == sorted(lls, reverse=True)


def test_study_summary(tmp_path):
    assert run_cli("study", "--replications", 2, "--n-cc", 5, "--n-cohort", 5, "--nq", 9,
                   "--fit-margin", "beta", "--seed", 3, "--out", tmp_path) == 0
    summary = io.read_study_summary(tmp_path / "study_summary.csv")
    assert set(summary) == {"ml", "ml-beta", "cl"}
    for table in summary.values():
        assert len(table) == 9 and all(len(stats) == 3 for stats in table.values())
    assert summary["cl"]["tau12"]["bias"] is None
    meta = json.loads((tmp_path / "study_meta.json").read_text())
    assert meta["replications"] == 2


def test_family_grid_labels():
    labels = [g[0] for g in FAMILY_GRID]
    assert labels[0] == "BVN" and labels[-1] == "CL" and len(labels) == 7
    for _, triple in FAMILY_GRID:
        ModelSpec(cop_cc=triple[0], cop12=triple[1], cop13=triple[2])
