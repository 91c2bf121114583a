"""Drives the command line end to end, on the bundled example and on
synthetic fits written to disk as artifacts."""

import csv
import io
import json

import numpy as np
import pytest
from click.testing import CliRunner
from importlib import resources

from logitpath import FittedSystem
from logitpath.cli import main

from conftest import expected_data_fit, make_system


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


def combined(result):
    # click >= 8.2 keeps stderr separate; older releases fold it into output
    try:
        err = result.stderr
    except (ValueError, AttributeError):
        err = ""
    return result.output + err


def records(result):
    assert result.exit_code == 0, combined(result)
    return json.loads(result.output)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    for name in ("example_model.json", "example_counts.json"):
        (d / name).write_text(
            resources.files("logitpath.data").joinpath(name).read_text())
    return d


@pytest.fixture(scope="module")
def artifact(workdir):
    out = workdir / "fit.json"
    result = invoke("fit", "--data", workdir / "example_counts.json",
                    "--model", workdir / "example_model.json", "--out", out)
    assert result.exit_code == 0, combined(result)
    return out


@pytest.fixture(scope="module")
def k3_artifact(workdir):
    # W1 carries no treatment term, so summing it out must leave the
    # global indirect effect untouched (see the marginalization tests)
    rng = np.random.default_rng(130)
    spec = make_system(3, mediator_terms={"W1": ["1", "W2", "W3"]})
    fitted = expected_data_fit(rng, spec=spec)
    out = workdir / "k3.json"
    out.write_text(json.dumps(fitted.to_json_dict()))
    return out


@pytest.fixture(scope="module")
def k2_artifact(workdir):
    rng = np.random.default_rng(131)
    fitted = expected_data_fit(rng, k=2)
    out = workdir / "k2.json"
    out.write_text(json.dumps(fitted.to_json_dict()))
    return out


def test_fit_prints_summary_and_writes_artifact(workdir, artifact):
    result = invoke("fit", "--data", workdir / "example_counts.json",
                    "--model", workdir / "example_model.json")
    assert result.exit_code == 0
    assert "equation Y" in result.output
    assert "converged True" in result.output

    fitted = FittedSystem.from_json_dict(json.loads(artifact.read_text()))
    assert fitted.spec.outcome.name == "Y"
    assert abs(fitted.params.get("Y", "1") - (-1.6186)) < 5e-4


def test_fit_missing_data_file(workdir):
    result = invoke("fit", "--data", workdir / "nope.json",
                    "--model", workdir / "example_model.json")
    assert result.exit_code == 1
    assert "error:" in combined(result)


def test_fit_malformed_model_json(workdir):
    bad = workdir / "bad.json"
    bad.write_text("{")
    result = invoke("fit", "--data", workdir / "example_counts.json",
                    "--model", bad)
    assert result.exit_code == 1
    assert "bad.json" in combined(result)


def test_fit_rejects_invalid_system(workdir):
    doc = json.loads((workdir / "example_model.json").read_text())
    doc["variables"][0]["kind"] = "continuous"
    broken = workdir / "broken_model.json"
    broken.write_text(json.dumps(doc))
    result = invoke("fit", "--data", workdir / "example_counts.json",
                    "--model", broken)
    assert result.exit_code == 1
    assert "invalid system" in combined(result)


def test_decompose_json_matches_fit(artifact):
    result = invoke("decompose", "--fitted", artifact, "--contrast", "2,1",
                    "--set", "C=0", "--scale", "logodds", "--format", "json")
    rows = records(result)
    assert [r["effect"] for r in rows] == ["DE", "IE", "RES", "TE"]
    assert all(r["contrast"] == "2 vs 1" for r in rows)
    assert all("C=0" in r["covariates"] for r in rows)

    fitted = FittedSystem.from_json_dict(json.loads(artifact.read_text()))
    de = rows[0]
    assert abs(de["estimate"] - fitted.params.get("Y", "X{2,1}")) < 1e-10
    assert abs(de["se"] - fitted.se("Y", "X{2,1}")) < 1e-6
    te, ie, res = rows[3], rows[1], rows[2]
    assert abs(te["estimate"] - de["estimate"] - ie["estimate"]
               - res["estimate"]) < 1e-9


def test_decompose_scale_both_puts_logodds_first(artifact):
    result = invoke("decompose", "--fitted", artifact, "--contrast", "2,1",
                    "--set", "C=1", "--format", "json")
    rows = records(result)
    assert [r["effect"] for r in rows] == [
        "DE", "IE", "RES", "TE", "DPE", "IPE", "RPE", "TPE"]


def test_decompose_by_stratifies(artifact):
    result = invoke("decompose", "--fitted", artifact, "--contrast", "2,1",
                    "--by", "C", "--scale", "prob", "--format", "json")
    rows = records(result)
    assert len(rows) == 8
    assert [r["effect"] for r in rows[:4]] == ["DPE", "IPE", "RPE", "TPE"]
    assert all("C=0" in r["covariates"] for r in rows[:4])
    assert all("C=1" in r["covariates"] for r in rows[4:])


def test_decompose_text_csv_and_out(artifact, workdir):
    text = invoke("decompose", "--fitted", artifact, "--contrast", "3,1",
                  "--set", "C=0", "--scale", "logodds")
    assert text.exit_code == 0
    assert "TE" in text.output and "3 vs 1" in text.output

    out = workdir / "table.csv"
    result = invoke("decompose", "--fitted", artifact, "--contrast", "3,1",
                    "--set", "C=0", "--scale", "logodds", "--format", "csv",
                    "--out", out)
    assert result.exit_code == 0
    assert f"wrote {out}" in result.output
    reader = csv.DictReader(io.StringIO(out.read_text()))
    assert reader.fieldnames == ["effect", "contrast", "covariates",
                                 "estimate", "se", "ci_low", "ci_high",
                                 "p_value"]
    assert len(list(reader)) == 4


def test_decompose_path_row_single_mediator(artifact):
    result = invoke("decompose", "--fitted", artifact, "--contrast", "2,1",
                    "--set", "C=0", "--scale", "logodds", "--path", "1",
                    "--format", "json")
    rows = records(result)
    assert [r["effect"] for r in rows] == ["DE", "IE", "RES", "TE", "PSIE[1]"]
    # the only path through a single mediator is the whole indirect effect
    assert abs(rows[4]["estimate"] - rows[1]["estimate"]) < 1e-10
    assert abs(rows[4]["se"] - rows[1]["se"]) < 1e-8


def test_decompose_derivative_needs_continuous_treatment(artifact):
    result = invoke("decompose", "--fitted", artifact, "--at", "0.5",
                    "--set", "C=0")
    assert result.exit_code == 1
    assert "continuous treatment" in combined(result)


@pytest.mark.parametrize("extra,message", [
    ([], "nothing to do"),
    (["--contrast", "2"], "--contrast wants"),
    (["--contrast", "2,1", "--set", "C"], "--set wants"),
    (["--contrast", "2,1", "--set", "Q=1"], "unknown variable"),
    (["--contrast", "9,1", "--set", "C=0"], "not a level"),
    (["--contrast", "2,1", "--set", "C=0", "--path", "2,1,3"], "collider"),
    (["--contrast", "2,1", "--set", "C=0", "--path", "1,5"], "mediator"),
    (["--contrast", "2,1", "--set", "C=0", "--by", "Q"], "unknown variable"),
    (["--contrast", "2,1"], "C"),
])
def test_decompose_bad_arguments(artifact, extra, message):
    result = invoke("decompose", "--fitted", artifact, *extra)
    assert result.exit_code == 1
    assert message in combined(result)


def test_decompose_marginalize_flag_errors(artifact, k3_artifact):
    both = invoke("decompose", "--fitted", k3_artifact, "--contrast", "1,0",
                  "--marginalize-inner", "1", "--marginalize-outer", "2")
    assert both.exit_code == 1 and "choose one" in combined(both)

    wrong = invoke("decompose", "--fitted", k3_artifact, "--contrast", "1,0",
                   "--marginalize-inner", "2")
    assert wrong.exit_code == 1 and "innermost" in combined(wrong)

    single = invoke("decompose", "--fitted", artifact, "--contrast", "2,1",
                    "--set", "C=0", "--marginalize-inner", "1")
    assert single.exit_code == 1
    assert "two mediators" in combined(single)

    outer3 = invoke("decompose", "--fitted", k3_artifact, "--contrast", "1,0",
                    "--marginalize-outer", "2")
    assert outer3.exit_code == 1 and "two-mediator" in combined(outer3)


def test_decompose_rejects_broken_artifact(workdir):
    stub = workdir / "stub.json"
    stub.write_text(json.dumps({"foo": 1}))
    result = invoke("decompose", "--fitted", stub, "--contrast", "1,0")
    assert result.exit_code == 1
    assert "not a fitted-system artifact" in combined(result)

    gone = invoke("decompose", "--fitted", workdir / "gone.json",
                  "--contrast", "1,0")
    assert gone.exit_code == 1


def test_inner_marginalization_preserves_gie(k3_artifact):
    full = records(invoke("decompose", "--fitted", k3_artifact,
                          "--contrast", "1,0", "--scale", "logodds",
                          "--format", "json"))
    reduced = records(invoke("decompose", "--fitted", k3_artifact,
                             "--contrast", "1,0", "--scale", "logodds",
                             "--marginalize-inner", "1", "--format", "json"))
    assert [r["effect"] for r in full] == ["DE", "GIE", "RES", "TE"]
    assert [r["effect"] for r in reduced] == ["DE", "GIE", "RES", "TE"]
    by_full = {r["effect"]: r for r in full}
    by_red = {r["effect"]: r for r in reduced}
    for name in ("TE", "GIE"):
        assert abs(by_red[name]["estimate"] - by_full[name]["estimate"]) < 1e-6
        assert abs(by_red[name]["se"] - by_full[name]["se"]) < 1e-6


def test_marginalize_inner_roundtrip(k3_artifact, workdir):
    out = workdir / "k3_reduced.json"
    result = invoke("marginalize", "--fitted", k3_artifact, "--inner", "1",
                    "--out", out)
    assert result.exit_code == 0, combined(result)
    assert f"wrote {out}" in result.output

    # survivors keep their names and slide down one index
    reduced = FittedSystem.from_json_dict(json.loads(out.read_text()))
    assert [m.name for m in reduced.spec.mediators] == ["W2", "W3"]
    assert [m.mediator_index for m in reduced.spec.mediators] == [1, 2]

    full = records(invoke("decompose", "--fitted", k3_artifact,
                          "--contrast", "1,0", "--scale", "logodds",
                          "--format", "json"))
    red = records(invoke("decompose", "--fitted", out, "--contrast", "1,0",
                         "--scale", "logodds", "--format", "json"))
    te_full = next(r for r in full if r["effect"] == "TE")
    te_red = next(r for r in red if r["effect"] == "TE")
    assert abs(te_red["estimate"] - te_full["estimate"]) < 1e-6
    assert abs(te_red["se"] - te_full["se"]) < 1e-4


def test_marginalize_outer_and_flag_errors(k2_artifact, k3_artifact, workdir):
    out = workdir / "k2_outer.json"
    result = invoke("marginalize", "--fitted", k2_artifact, "--outer", "2",
                    "--out", out)
    assert result.exit_code == 0, combined(result)
    reduced = FittedSystem.from_json_dict(json.loads(out.read_text()))
    assert [m.name for m in reduced.spec.mediators] == ["W1"]

    neither = invoke("marginalize", "--fitted", k2_artifact, "--out", out)
    assert neither.exit_code == 1
    assert "choose exactly one" in combined(neither)

    both = invoke("marginalize", "--fitted", k2_artifact, "--inner", "1",
                  "--outer", "2", "--out", out)
    assert both.exit_code == 1 and "choose exactly one" in combined(both)

    wrong = invoke("marginalize", "--fitted", k2_artifact, "--inner", "2",
                   "--out", out)
    assert wrong.exit_code == 1 and "innermost" in combined(wrong)

    outer3 = invoke("marginalize", "--fitted", k3_artifact, "--outer", "2",
                    "--out", out)
    assert outer3.exit_code == 1 and "two-mediator" in combined(outer3)


def test_simulate_tiny_grid(workdir):
    config = workdir / "grid.json"
    config.write_text(json.dumps({
        "seed": 81, "replications": 6, "treatment": ["binary"],
        "beta_x": [0.9], "n": [200]}))
    out = workdir / "study.csv"
    result = invoke("simulate", "--config", config, "--out", out)
    assert result.exit_code == 0, combined(result)
    assert "rsd avg=" in result.output
    assert f"wrote {out}" in result.output

    reader = csv.DictReader(io.StringIO(out.read_text()))
    assert reader.fieldnames[:4] == ["method", "treatment", "beta_x", "n"]
    rows = list(reader)
    assert [r["method"] for r in rows] == ["khb", "rsd"]
    assert all(r["n"] == "200" for r in rows)


def test_simulate_config_errors(workdir):
    as_list = workdir / "list.json"
    as_list.write_text("[1, 2]")
    result = invoke("simulate", "--config", as_list)
    assert result.exit_code == 1
    assert "expected a JSON object" in combined(result)

    sparse = workdir / "sparse.json"
    sparse.write_text(json.dumps({"seed": 1}))
    result = invoke("simulate", "--config", sparse)
    assert result.exit_code == 1
    assert "bad study config" in combined(result)
