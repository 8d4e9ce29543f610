import csv
import json

import numpy as np
import pytest

from iml.cli import ExperimentConfig, main

BASE = """
seed = 42
p = 2
t = 0.5
dt = 0.01
eps = 0.1
samples = 2500
x0 = [[0.5]]

[domain]
kind = "interval"
d = 1
params = {{ a = 0.0, b = 1.0 }}

[grid]
h = 0.02

[simulate]
eps_list = [0.2, 0.1]
t_list = [0.25, 0.5]
{extra}
"""


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def run(sub, cfg, out, workers=1):
    return main([sub, "--config", str(cfg), "--out", str(out), "--workers", str(workers)])


def only(path, suffix):
    files = sorted(path.glob(f"*{suffix}"))
    assert len(files) == 1
    return files[0]


def test_repeat_runs_are_byte_identical(tmp_path):
    cfg = write(tmp_path, BASE.format(extra=""))
    assert run("simulate", cfg, tmp_path / "a") == 0
    assert run("simulate", cfg, tmp_path / "b") == 0
    for suffix in (".csv", ".json", ".svg"):
        assert only(tmp_path / "a", suffix).read_bytes() == only(tmp_path / "b", suffix).read_bytes()


def test_worker_count_does_not_change_results(tmp_path):
    cfg = write(tmp_path, BASE.format(extra=""))
    assert run("simulate", cfg, tmp_path / "w1", workers=1) == 0
    assert run("simulate", cfg, tmp_path / "w3", workers=3) == 0
    a = only(tmp_path / "w1", ".csv").read_bytes()
    b = only(tmp_path / "w3", ".csv").read_bytes()
    assert a == b


def test_outputs_carry_config_hash(tmp_path):
    cfg = write(tmp_path, BASE.format(extra=""))
    assert run("simulate", cfg, tmp_path) == 0
    side = json.loads(only(tmp_path, ".json").read_text())
    rows = list(csv.DictReader(open(only(tmp_path, ".csv"))))
    assert {r["config_hash"] for r in rows} == {side["config_hash"]}
    assert only(tmp_path, ".csv").name.startswith("simulate-" + side["config_hash"][:12])
    surv = [float(r["value"]) for r in rows if r["quantity"] == "survival"]
    assert surv[0] >= surv[1]


def test_seed_override_from_environment(tmp_path, monkeypatch):
    cfg = write(tmp_path, BASE.format(extra=""))
    plain = ExperimentConfig.load(cfg, "simulate")
    monkeypatch.setenv("IML_SEED", "7")
    over = ExperimentConfig.load(cfg, "simulate")
    assert over.seed == 7 and over.config_hash != plain.config_hash


def test_inadmissible_brownian_pair_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, 'seed = 1\np = 3\n[domain]\nkind = "whole"\nd = 3\n')
    assert run("constants", cfg, tmp_path) == 2
    err = capsys.readouterr().err
    assert "d − p(d−2) = 0" in err and len(err.strip().splitlines()) == 1


def test_admissible_planar_quintuple_runs(tmp_path):
    text = ('seed = 1\np = 5\n[domain]\nkind = "disk"\nd = 2\n'
            'params = { center = [0.0, 0.0], radius = 1.0 }\n[grid]\nh = 0.125\n')
    cfg = write(tmp_path, text)
    assert run("rate", cfg, tmp_path) == 0
    rows = {r["quantity"]: float(r["value"]) for r in csv.DictReader(open(only(tmp_path, ".csv")))}
    assert rows["lambda1"] == pytest.approx(2.8915928, rel=2e-2)
    assert rows["p_lambda1"] == pytest.approx(5 * rows["lambda1"], rel=1e-12)


@pytest.mark.parametrize("text", ["seed = [", 'seed = 1\n[domain]\nkind = "blob"\nd = 1\n', "p = 2\n"])
def test_bad_config_exits_1(tmp_path, text):
    assert run("simulate", write(tmp_path, text), tmp_path) == 1


def test_inadmissible_stable_exits_2(tmp_path):
    cfg = write(tmp_path, BASE.format(extra="[stable]\nalpha = 1.2\n"))
    assert run("stable", cfg, tmp_path) == 2


def test_stable_and_plot_subcommands(tmp_path):
    cfg = write(tmp_path, BASE.format(extra="[stable]\nalpha = 0.8\nxi = [0.5, 1.0]\n"))
    assert run("stable", cfg, tmp_path / "out") == 0
    rows = list(csv.DictReader(open(only(tmp_path / "out", ".csv"))))
    for r in rows:
        assert abs(float(r["empirical"]) - float(r["exact"])) < 4 * float(r["stderr"]) + 1e-12
    src = only(tmp_path / "out", ".csv")
    plot_cfg = write(tmp_path, f'[plot]\ncsv = "{src}"\nx = "xi"\ny = "empirical"\nerr = "stderr"\n',
                     "plot.toml")
    assert run("plot", plot_cfg, tmp_path / "figs") == 0
    svg = (tmp_path / "figs" / (src.stem + ".svg")).read_text()
    assert svg.lstrip().startswith("<?xml") and "<dc:date>" not in svg


def test_moments_subcommand(tmp_path):
    cfg = write(tmp_path, BASE.format(extra="[moments]\nk = [1]\n"))
    assert run("moments", cfg, tmp_path) == 0
    row = next(csv.DictReader(open(only(tmp_path, ".csv"))))
    assert float(row["value"]) > 0 and float(row["error_estimate"]) < 1e-2 * float(row["value"])
