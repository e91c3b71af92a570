import json
import subprocess
import sys

import pytest

from strongsde import cli

SMALL = {
    "schema_version": 1,
    "seed": 3,
    "equation": {"catalog": "gbm"},
    "experiments": [{
        "name": "gbm_euler_small", "scheme": "euler",
        "metric": {"kind": "endpoint"}, "n_grid": [8, 16, 32, 64],
        "M": 400, "band": [-0.8, -0.2]}],
}


def write(tmp_path, obj, name="c.json"):
    f = tmp_path / name
    f.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=1))
    return str(f)


def test_configs_listed(capsys):
    assert cli.main(["configs"]) == 0
    names = capsys.readouterr().out.split()
    assert "cir_delta5_endpoint" in names
    assert "quintic_all_metrics" in names


@pytest.mark.parametrize("name", cli.packaged_configs())
def test_packaged_configs_resolve(name):
    cfg, text, src = cli.load_config(name)
    if "experiments" in cfg:
        plan = cli.resolve_rates(cfg, text, src)
        assert plan["experiments"]
    else:
        assert cli.classify(cfg, text, src)


def test_dry_run_does_not_sample(capsys, monkeypatch):
    monkeypatch.setattr(cli, "run_rates", lambda *a: pytest.fail("sampled"))
    assert cli.main(["rates", "--config", "quintic_all_metrics",
                     "--dry-run"]) == 0
    plan = json.loads(capsys.readouterr().out)
    assert [e["scheme"] for e in plan["experiments"]] == [
        "tamed_milstein", "tamed_euler", "tamed_euler"]


def test_seed_flag_overrides(capsys):
    cli.main(["rates", "--config", "gbm_calibration", "--dry-run",
              "--seed", "99"])
    assert json.loads(capsys.readouterr().out)["seed"] == 99


def test_syntax_error_has_line(tmp_path, capsys):
    f = write(tmp_path, '{\n  "schema_version": 1,\n  "equation": {,\n}')
    assert cli.main(["classify", "--config", f]) == 2
    err = capsys.readouterr().err
    assert f"{f}:3:" in err


def test_unknown_key_points_at_line(tmp_path, capsys):
    cfg = dict(SMALL)
    cfg["experiments"] = [dict(SMALL["experiments"][0], colour="red")]
    f = write(tmp_path, cfg)
    assert cli.main(["rates", "--config", f]) == 2
    err = capsys.readouterr().err
    line = [i for i, l in enumerate(open(f).read().splitlines(), 1)
            if "colour" in l][0]
    assert f"{f}:{line}:" in err and "colour" in err


def test_wrong_schema_version(tmp_path, capsys):
    f = write(tmp_path, dict(SMALL, schema_version=7))
    assert cli.main(["rates", "--config", f]) == 2
    assert "schema_version" in capsys.readouterr().err


def test_equation_needs_exactly_one_source(tmp_path):
    both = dict(SMALL, equation={"catalog": "gbm",
                                 "linear": [0, 1, 0, 1]})
    with pytest.raises(cli.ConfigError):
        cli.build_equation(both["equation"])
    with pytest.raises(cli.ConfigError):
        cli.build_equation({})


def test_missing_config_file(capsys):
    assert cli.main(["rates", "--config", "/nonexistent.json"]) == 2


def test_classify_verdicts(capsys, tmp_path):
    assert cli.main(["classify", "--config", "classify_squared_bessel",
                     "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "classify.json").read_text())
    v = {r["theorem_id"]: r["verdict"] for r in rep["reports"]}
    assert v["pointwise"] == "violated"
    assert v["sup"] == v["Lp"] == "satisfied"
    capsys.readouterr()
    cli.main(["classify", "--config", "classify_quintic"])
    out = capsys.readouterr().out
    assert out.count("satisfied") == 3 and "violated" not in out
    cli.main(["classify", "--config", "classify_gbm"])
    assert "pointwise: violated" in capsys.readouterr().out


def test_small_rates_run_outputs(tmp_path, capsys):
    f = write(tmp_path, SMALL)
    out = tmp_path / "out"
    code = cli.main(["rates", "--config", f, "--out", str(out)])
    rep = json.loads((out / "rates.json").read_text())
    assert rep["schema_version"] == 1 and rep["seed"] == 3
    assert rep["config"]["experiments"][0]["M"] == 400
    r = rep["reports"][0]
    assert code == (0 if r["passed"] else 1)
    assert (out / "gbm_euler_small.csv").read_text().startswith("n,mean")
    assert len((out / "gbm_euler_small.dat").read_text().splitlines()) == 5


def test_rates_reproducible(tmp_path):
    f = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["rates", "--config", f, "--out", str(a)])
    cli.main(["rates", "--config", f, "--out", str(b), "--jobs", "2"])
    assert (a / "gbm_euler_small.csv").read_text() == \
        (b / "gbm_euler_small.csv").read_text()


def test_verify_dry_run(capsys):
    assert cli.main(["verify", "all", "--dry-run"]) == 0
    assert json.loads(capsys.readouterr().out)["suites"] == list(cli.SUITES)


def test_verify_gaussian(tmp_path):
    assert cli.main(["verify", "gaussian", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["results"]["gaussian"]["passed"]


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "strongsde.cli", "configs"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "gbm_calibration" in r.stdout
