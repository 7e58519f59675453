import csv
import json
import math

import pytest

from excursions.harness import (SCHEMAS, ConfigError, ExperimentConfig, Tolerances, _decreasing_with_slack,
                                epk_angle_guard, epk_residuals, main, read_experiment_config)
from excursions.lattice_domain import DomainConfig

SMALL = """\
[domain]
shape = disk
n = 4, 8
arcs = 0, 1.5707963267948966, 3.141592653589793, 4.71238898038469

[experiment]
seed = 11
square = false
"""


def test_default_config_is_valid():
    cfg = ExperimentConfig().validate()
    assert cfg.Ns == (8, 16, 32, 64)
    assert cfg.threshold(64) == 0.25


def test_asymptotic_threshold_rejects_default_arcs():
    cfg = ExperimentConfig(min_sep=None)
    # N^(-1/48) (log N)^(2/3) exceeds the pi/2 gap of the quarter arcs for N >= 16
    with pytest.raises(ConfigError):
        cfg.validate()


@pytest.mark.parametrize("change", [dict(green_ns=(8, 16, 128)), dict(epk_ns=(32, 16)), dict(path_Ns=(8, 64)),
                                    dict(seed=-1), dict(samples=0)])
def test_rejected_configs(change):
    with pytest.raises(ConfigError):
        ExperimentConfig(**change).validate()


def test_domain_N_cap():
    cfg = ExperimentConfig(domain=DomainConfig(Ns=(32, 128)))
    with pytest.raises(ConfigError):
        cfg.validate()


def test_read_experiment_config(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(SMALL + "samples = 500\nmin_sep = eps_n\ngreen_ns = 8, 16\n\n[tolerances]\ngreen_err = 0.01\n")
    cfg = read_experiment_config(p)
    assert cfg.Ns == (4, 8) and cfg.seed == 11 and cfg.samples == 500 and not cfg.square
    assert cfg.min_sep is None and cfg.green_ns == (8, 16)
    assert cfg.tolerances.green_err == 0.01 and cfg.tolerances.cara_dev == Tolerances().cara_dev
    p.write_text("[tolerances]\nnonsense = 1\n")
    with pytest.raises(ConfigError):
        read_experiment_config(p)


def test_decreasing_with_slack():
    assert _decreasing_with_slack([3, 2, 1], 0.1)
    assert _decreasing_with_slack([3, 3.2, 1], 0.1)
    assert not _decreasing_with_slack([3, 3.2, 3.3], 0.1)
    assert not _decreasing_with_slack([3, 4, 1], 0.1)


def test_epk_asymptotic_guard_excludes_everything():
    assert all(epk_angle_guard(n) > math.pi for n in (16, 32, 64))
    r = epk_residuals(16, min_angle=None)
    assert r["residuals"].size == 0 and r["excluded"] == r["pairs"] + r["excluded"]


def _run_cli(tmp_path, name):
    cfgp = tmp_path / "small.ini"
    cfgp.write_text(SMALL)
    out = tmp_path / name
    code = main(["discretize", "--config", str(cfgp), "--out", str(out)])
    return code, out


def test_cli_discretize_schema_and_reproducibility(tmp_path):
    code, out = _run_cli(tmp_path, "a")
    assert code == 0
    with open(out / "discretize.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == SCHEMAS["discretize"]
    assert [int(r["N"]) for r in rows] == [4, 8]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seed"] == 11 and summary["experiments"] == ["discretize"]
    code, out2 = _run_cli(tmp_path, "b")
    assert (out / "discretize.csv").read_bytes() == (out2 / "discretize.csv").read_bytes()
    # the summary echoes the output directory, which is the only difference
    other = json.loads((out2 / "summary.json").read_text())
    assert other["config"].pop("out") != summary["config"].pop("out")
    assert other == summary


def test_cli_rejects_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text("[experiment]\nmin_sep = asymptotic\n")
    assert main(["discretize", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
    assert "config rejected" in capsys.readouterr().err
