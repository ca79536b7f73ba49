import json

import numpy as np
import pytest

from indweights import (
    BootstrapConfig,
    KernelSpec,
    SolverConfig,
    adrf_curve,
    balance_table,
    bootstrap_bands,
    default_bandwidth,
    default_grid,
    independence_weights,
    load_dataset,
)
from indweights.cli import main
from indweights.simulation import DGPConfig, generate, run_experiment


@pytest.fixture
def data_csv(tmp_path):
    d, _ = generate(DGPConfig(n=60, seed=1))
    path = tmp_path / "data.csv"
    path.write_text(d.to_csv("dose", "y"))
    return path


@pytest.fixture
def cli(data_csv, tmp_path, capsys):
    """Run a command string; ``{data}`` is the sample CSV and ``{tmp}`` the temp dir."""

    def run(command):
        argv = [part.format(data=data_csv, tmp=tmp_path) for part in command.split()]
        code = main(argv)
        out, err = capsys.readouterr()
        return code, out, err

    return run


def test_weights_subcommand_matches_library(cli, data_csv, tmp_path):
    code, stdout, _ = cli("weights --input {data} --exposure dose --outcome y --output {tmp}/w.csv")
    assert code == 0
    d = load_dataset(data_csv, "dose", "y")
    res = independence_weights(d)
    text = (tmp_path / "w.csv").read_text()
    assert text == res.weights.to_csv()
    assert len(text.strip().splitlines()) == d.n + 1
    assert json.loads(stdout)["criterion"]["total"] == pytest.approx(res.criterion.total)


def test_unknown_flag_is_usage_error(cli):
    code, _, err = cli("weights --input {data} --exposure dose --output x --bogus")
    assert code == 1 and "usage" in err
    assert cli("")[0] == 1


def test_missing_file_is_data_error(cli):
    code, _, err = cli("weights --input {tmp}/nope.csv --exposure a --output {tmp}/w.csv")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["exit_code"] == 2


def test_unknown_column_is_data_error(cli):
    assert cli("weights --input {data} --exposure nope --output {tmp}/w.csv")[0] == 2


def test_non_convergence_writes_weights_and_warnings(cli, tmp_path):
    code, _, err = cli("weights --input {data} --exposure dose --max-iterations 3 --output {tmp}/w.csv")
    assert code == 3
    w = np.loadtxt(tmp_path / "w.csv", delimiter=",", skiprows=1)
    assert abs(w.sum() - 60) < 1e-6 and w.min() >= 0
    warn = json.loads((tmp_path / "w.warnings.json").read_text())
    assert warn["converged"] is False
    assert json.loads(err.strip().splitlines()[-1])["error"] == "non_convergence"


def test_balance_json_matches_library(cli, data_csv):
    code, stdout, _ = cli(
        "balance --input {data} --exposure dose --weights dcow --json --max-exposure-power 2 --max-covariate-power 2"
    )
    assert code == 0
    d = load_dataset(data_csv, "dose")
    rep = balance_table(d, independence_weights(d).weights, max_exposure_power=2, max_covariate_power=2)
    assert stdout == rep.to_json() + "\n"
    code, text, _ = cli("balance --input {data} --exposure dose")
    assert code == 0 and "ESS" in text


def test_balance_with_weights_file(cli, tmp_path):
    cli("weights --input {data} --exposure dose --output {tmp}/w.csv")
    code, from_file, _ = cli("balance --input {data} --exposure dose --weights {tmp}/w.csv --json")
    code2, direct, _ = cli("balance --input {data} --exposure dose --weights dcow --json")
    assert code == code2 == 0
    a, b = json.loads(from_file), json.loads(direct)
    assert a["criterion"]["total"] == pytest.approx(b["criterion"]["total"], rel=1e-9)
    (tmp_path / "short.csv").write_text("weight\n1\n1\n")
    assert cli("balance --input {data} --exposure dose --weights {tmp}/short.csv")[0] == 2


def test_adrf_matches_library(cli, data_csv, tmp_path):
    code, _, _ = cli(
        "adrf --input {data} --exposure dose --outcome y --weights uniform --grid-size 12 --output {tmp}/c.csv"
    )
    assert code == 0
    d = load_dataset(data_csv, "dose", "y")
    grid = default_grid(d.exposure, 12)
    est = adrf_curve(d, np.ones(d.n), grid, KernelSpec("epanechnikov", default_bandwidth(d.exposure)))
    assert (tmp_path / "c.csv").read_text() == est.to_csv()
    code, stdout, _ = cli(
        "adrf --input {data} --exposure dose --outcome y --estimator doubly_robust --bandwidth 4.0 --grid-size 5"
    )
    assert code == 0 and len(stdout.strip().splitlines()) == 6
    assert cli("adrf --input {data} --exposure dose --outcome y --bandwidth -1")[0] == 1


def test_bootstrap_writes_sidecar(cli, data_csv, tmp_path):
    code, _, _ = cli(
        "bootstrap --input {data} --exposure dose --outcome y --weights uniform"
        " --replications 20 --grid-size 6 --seed 4 --output {tmp}/bands.csv"
    )
    assert code == 0
    side = json.loads((tmp_path / "bands.json").read_text())
    assert side["replications"] == 20 and side["seed"] == 4
    d = load_dataset(data_csv, "dose", "y")
    grid = default_grid(d.exposure, 6)
    kernel = KernelSpec("epanechnikov", default_bandwidth(d.exposure))
    est = bootstrap_bands(d, "uniform", "local_linear", grid, kernel, BootstrapConfig(20, seed=4), SolverConfig())
    assert (tmp_path / "bands.csv").read_text() == est.to_csv()
    code, _, _ = cli("bootstrap --input {data} --exposure dose --outcome y --replications 5 --output {tmp}/b.csv")
    assert code == 1


def test_simulate_csv(cli, tmp_path):
    code, _, _ = cli("simulate --n 50 --replications 3 --grid-size 8 --methods uniform,dcow --output {tmp}/sim.csv")
    assert code == 0
    ref = run_experiment(DGPConfig(n=50), ["uniform", "dcow"], 3, grid_size=8)
    assert (tmp_path / "sim.csv").read_text() == ref.to_csv()
    assert json.loads((tmp_path / "sim.json").read_text())["n"] == 50
    code, stdout, _ = cli("simulate --n 40 --replications 2 --grid-size 5 --methods uniform")
    assert code == 0 and stdout.startswith("method,n,mab,irmse,failures")
    assert cli("simulate --methods magic")[0] == 1
