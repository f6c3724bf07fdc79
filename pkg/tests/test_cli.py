import json

import pandas as pd
import pytest
from click.testing import CliRunner

from parapot import create_app


@pytest.fixture
def app():
    return create_app()


@pytest.fixture
def runner():
    return CliRunner()


def write(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


def test_empty_campaign_passes(app, runner, tmp_path):
    config = write(tmp_path / "campaign.json", {"checks": [], "out_dir": "out"})
    result = runner.invoke(app, ["campaign", config])
    assert result.exit_code == 0
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    assert index["pass"] is True
    assert index["checks"] == []
    assert index["conventions"]["ball"] == "open"


def test_campaign_writes_one_report_per_check(app, runner, tmp_path):
    config = write(tmp_path / "campaign.json", {
        "seed": 7,
        "out_dir": "out",
        "checks": [
            {"name": "dirac", "check": "dirac_closed_forms", "params": {"points": 5}},
            {"name": "lorentz", "check": "lorentz_exactness", "params": {"samples": 5}},
        ],
    })
    result = runner.invoke(app, ["campaign", config])
    assert result.exit_code == 0
    out = tmp_path / "out"
    assert json.loads((out / "dirac.json").read_text())["pass"] is True
    lorentz = json.loads((out / "lorentz.json").read_text())
    assert lorentz["seed"] == 7
    assert list(pd.read_csv(out / "lorentz.csv").columns) == ["trial", "q", "s", "error"]
    index = json.loads((out / "index.json").read_text())
    assert [c["name"] for c in index["checks"]] == ["dirac", "lorentz"]


def test_campaign_reports_do_not_depend_on_threads(app, runner, tmp_path):
    checks = [
        {"name": "dirac", "check": "dirac_closed_forms", "params": {"points": 5}},
        {"name": "lorentz", "check": "lorentz_exactness", "params": {"samples": 5}},
    ]
    for threads, out in (("1", "serial"), ("2", "parallel")):
        config = write(tmp_path / f"{out}.json", {"seed": 3, "out_dir": out, "checks": checks})
        assert runner.invoke(app, ["--threads", threads, "campaign", config]).exit_code == 0
    for name in ("dirac.json", "lorentz.json"):
        assert (tmp_path / "serial" / name).read_text() == (tmp_path / "parallel" / name).read_text()


def test_yaml_campaign(app, runner, tmp_path):
    config = tmp_path / "campaign.yaml"
    config.write_text("out_dir: out\nchecks:\n  - name: lorentz\n    check: lorentz_exactness\n    params:\n      samples: 3\n")
    result = runner.invoke(app, ["campaign", str(config)])
    assert result.exit_code == 0
    assert (tmp_path / "out" / "lorentz.json").exists()


def test_unknown_check_is_a_parse_error(app, runner, tmp_path):
    config = write(tmp_path / "campaign.json", {"checks": [{"name": "x", "check": "no_such_check"}]})
    assert runner.invoke(app, ["campaign", config]).exit_code == 2


def test_duplicate_check_names_are_rejected(app, runner, tmp_path):
    entry = {"name": "x", "check": "lorentz_exactness"}
    config = write(tmp_path / "campaign.json", {"checks": [entry, entry]})
    assert runner.invoke(app, ["campaign", config]).exit_code == 2


def test_potential_eval_writes_values(app, runner, tmp_path):
    measure = write(tmp_path / "mu.json", {"dim": 2, "atoms": [{"x": [0.0, 0.0], "t": 0.0, "mass": 1.0}]})
    points = tmp_path / "points.csv"
    points.write_text("x_1,x_2,t\n3.0,4.0,0.0\n1.0,0.0,8.0\n")
    out = tmp_path / "values.csv"
    result = runner.invoke(app, ["potential", "eval", "--kind", "riesz", "--alpha", "1", "--measure", measure,
                                 "--points", str(points), "--out", str(out)])
    assert result.exit_code == 0
    values = pd.read_csv(out)["value"].tolist()
    assert values == pytest.approx([5.0 ** -3 / 3, 4.0 ** -3 / 3])


def test_malformed_measure_exits_two(app, runner, tmp_path):
    measure = tmp_path / "mu.json"
    measure.write_text('{"dim": 2, "atoms": [{"x": [0.0, 0.0], "mass": NaN}]}')
    points = tmp_path / "points.csv"
    points.write_text("x_1,x_2,t\n1.0,1.0,0.0\n")
    result = runner.invoke(app, ["potential", "eval", "--alpha", "1", "--measure", str(measure),
                                 "--points", str(points), "--out", str(tmp_path / "values.csv")])
    assert result.exit_code == 2


def test_out_of_range_order_exits_two(app, runner, tmp_path):
    measure = write(tmp_path / "mu.json", {"dim": 1, "atoms": [{"x": [0.0]}]})
    points = tmp_path / "points.csv"
    points.write_text("x_1,t\n1.0,0.0\n")
    result = runner.invoke(app, ["potential", "eval", "--alpha", "5", "--measure", measure,
                                 "--points", str(points), "--out", str(tmp_path / "values.csv")])
    assert result.exit_code == 2


def test_verify_rejects_options_that_do_not_apply(app, runner, tmp_path):
    sets = write(tmp_path / "sets.json", [{"x": [0.0, 0.0], "t": 0.0, "radius": 0.5}])
    result = runner.invoke(app, ["verify", "good-lambda", "--sets", sets])
    assert result.exit_code == 2


def test_verify_single_check(app, runner, tmp_path):
    spec = write(tmp_path / "spec.json", {"points": 5, "alpha": 1.5})
    out = tmp_path / "dirac.json"
    result = runner.invoke(app, ["--seed", "11", "verify", "dirac-closed-forms", "--spec", spec, "--out", str(out)])
    assert result.exit_code == 0
    report = json.loads(out.read_text())
    assert report["pass"] is True
    assert report["seed"] == 11


def test_norm_command(app, runner, tmp_path):
    function = tmp_path / "f.csv"
    # a 2 x 2 lattice of unit cells
    function.write_text("x_1,t,value\n0.5,0.5,1.0\n1.5,0.5,1.0\n0.5,1.5,1.0\n1.5,1.5,1.0\n")
    spec = write(tmp_path / "spec.json", {"q": 2, "s": 2})
    out = tmp_path / "norm.json"
    result = runner.invoke(app, ["norm", "--spec", spec, "--function", str(function), "--out", str(out)])
    assert result.exit_code == 0
    assert json.loads(out.read_text())["norm"] == pytest.approx(2.0)


def test_heat_solve_then_verify_decay(app, runner, tmp_path):
    problem = write(tmp_path / "problem.json", {
        "grid": {"corner": [-2.0], "sides": [4.0], "t0": 0.0, "t1": 1.0, "cells": [33], "steps": 16},
        "initial": {"dim": 1, "atoms": [{"x": [0.0]}]},
    })
    solution = tmp_path / "u.csv"
    assert runner.invoke(app, ["heat", "solve", "--problem", problem, "--out", str(solution)]).exit_code == 0
    out = tmp_path / "decay.json"
    result = runner.invoke(app, ["heat", "verify", "decay", "--solution", str(solution), "--out", str(out)])
    assert result.exit_code == 0
    assert json.loads(out.read_text())["fitted_constants"]["slope"] == pytest.approx(-0.5, abs=1e-6)
