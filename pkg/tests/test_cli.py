import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from lucjopt.cli import main
from lucjopt.hamiltonian import write_fcidump

from conftest import random_hamiltonian


@pytest.fixture
def tiny_fixture(tmp_path, rng):
    h = random_hamiltonian(3, 1, 1, rng, core=0.3, scale=0.3)
    path = tmp_path / "tiny.fcidump"
    write_fcidump(h, path)
    return str(path)


def invoke(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def write_json(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def test_validate_ok(tiny_fixture):
    result = invoke("validate", tiny_fixture)
    assert result.exit_code == 0
    assert "N=3" in result.output


def test_validate_fci_energy(tiny_fixture):
    result = invoke("validate", tiny_fixture, "--fci")
    assert result.exit_code == 0
    assert "fci_energy" in result.output


def test_validate_corrupted_file(tmp_path):
    bad = tmp_path / "bad.fcidump"
    bad.write_text("&FCI NORB=2,NELEC=2,MS2=0,\n&END\n 1.0 5 1 1 1\n")
    result = invoke("validate", str(bad))
    assert result.exit_code == 1
    assert "invalid fixture" in result.output


def test_validate_missing_file(tmp_path):
    result = invoke("validate", str(tmp_path / "nope.fcidump"))
    assert result.exit_code == 1
    assert "nope.fcidump" in result.output


def test_optimize_trivial_config(tmp_path, tiny_fixture):
    config = write_json(tmp_path, "run.json", {
        "fixture": tiny_fixture,
        "ansatz": {"n_layers": 1},
        "optimizer": {"kind": "lm", "max_iters": 60},
        "init": {"kind": "zero_noise", "n_restarts": 1},
        "seed": 5,
    })
    out = str(tmp_path / "out")
    result = invoke("--out", out, "optimize", "-c", config)
    assert result.exit_code == 0, result.output
    assert os.path.exists(os.path.join(out, "curve.csv"))
    assert os.path.exists(os.path.join(out, "summary.json"))
    assert os.path.exists(os.path.join(out, "convergence.png"))
    with open(os.path.join(out, "summary.json")) as f:
        summary = json.load(f)
    assert summary["converged"]


def test_optimize_missing_fixture(tmp_path):
    config = write_json(tmp_path, "run.json", {
        "fixture": str(tmp_path / "ghost.fcidump"),
        "ansatz": {"n_layers": 1},
    })
    result = invoke("optimize", "-c", config)
    assert result.exit_code == 1
    assert "ghost.fcidump" in result.output


def test_optimize_invalid_config(tmp_path, tiny_fixture):
    config = write_json(tmp_path, "run.json", {
        "fixture": tiny_fixture,
        "ansatz": {"n_layers": 1},
        "optimizer": {"kind": "adam"},
    })
    result = invoke("optimize", "-c", config)
    assert result.exit_code != 0
    assert "invalid config" in result.output


def test_optimize_noise_determinism(tmp_path, tiny_fixture):
    config = write_json(tmp_path, "run.json", {
        "fixture": tiny_fixture,
        "ansatz": {"n_layers": 1},
        "optimizer": {"kind": "lm", "max_iters": 8},
        "noise": {"sigma": 1e-4},
        "init": {"kind": "zero_noise", "n_restarts": 1},
    })
    outputs = []
    for run in ("a", "b"):
        out = str(tmp_path / run)
        result = invoke("--seed", "11", "--out", out, "optimize", "-c", config)
        assert result.exit_code in (0, 2)
        outputs.append(open(os.path.join(out, "curve.csv")).read())
    assert outputs[0] == outputs[1]


def test_scan_subcommand(tmp_path, rng):
    from test_scan import synthetic_curve

    points = synthetic_curve(tmp_path, n_points=2)
    config = write_json(tmp_path, "scan.json", {
        "points": [[b, p] for b, p in points],
        "ansatz": {"n_layers": 1},
        "optimizer": {"kind": "lm", "max_iters": 20},
        "bootstrap": "none",
        "init": {"n_restarts": 1},
        "seed": 2,
    })
    out = str(tmp_path / "scanout")
    result = invoke("--out", out, "scan", "-c", config)
    assert result.exit_code == 0, result.output
    for name in ("curve.csv", "plotdata.json"):
        assert os.path.exists(os.path.join(out, name))
    for fig in ("dissociation.png", "errors.png", "spin_squared.png"):
        assert os.path.exists(os.path.join(out, "figures", fig))


def test_cost_subcommand_worked_numbers(tmp_path):
    out = str(tmp_path / "cost")
    result = invoke("--out", out, "cost", "--n-orbitals", "8", "--n-layers", "2")
    assert result.exit_code == 0
    n_g = 3 * 128 + 2 * (8 + 2 * 7)
    assert f"| gradient | {4 * n_g * 9} |" in result.output
    csv_text = open(os.path.join(out, "cost.csv")).read()
    assert csv_text.splitlines()[1].startswith(f"gradient,{4 * n_g * 9},")
    assert os.path.exists(os.path.join(out, "cost.md"))


def test_cost_qsr_rows(tmp_path):
    result = invoke("--out", str(tmp_path), "cost", "--n-orbitals", "4",
                    "--n-layers", "1", "--method", "qsr")
    assert result.exit_code == 0
    assert "hamiltonian_channels" not in result.output


def test_estimate_subcommand(tmp_path, tiny_fixture):
    config = write_json(tmp_path, "est.json", {
        "fixture": tiny_fixture,
        "ansatz": {"n_layers": 1},
        "element": {"kind": "overlap", "g": 2, "h": 5},
        "shots": 3000,
        "seed": 3,
    })
    out = str(tmp_path / "est")
    result = invoke("--out", out, "estimate", "-c", config)
    assert result.exit_code == 0, result.output
    with open(os.path.join(out, "estimate.json")) as f:
        report = json.load(f)
    # statistical agreement: |exact - sampled| within 4 bound-derived sigmas
    assert report["abs_deviation"] <= 4 * report["std_bound"] + 1e-9


def test_estimate_energy_kind(tmp_path, tiny_fixture):
    config = write_json(tmp_path, "est.json", {
        "fixture": tiny_fixture,
        "ansatz": {"n_layers": 1},
        "element": {"kind": "energy"},
        "shots": 2000,
    })
    result = invoke("--out", str(tmp_path / "est2"), "estimate", "-c", config)
    assert result.exit_code == 0, result.output


def test_help_snapshot():
    result = invoke("--help")
    assert result.exit_code == 0
    expected = [
        "Simulate and optimize cluster-Jastrow wavefunctions.",
        "--seed",
        "--out",
        "--threads",
        "optimize",
        "scan",
        "cost",
        "estimate",
        "validate",
    ]
    for token in expected:
        assert token in result.output, token


def test_toml_config(tmp_path, tiny_fixture):
    config = tmp_path / "run.toml"
    config.write_text(
        f'fixture = "{tiny_fixture}"\n'
        "seed = 5\n"
        "[ansatz]\nn_layers = 1\n"
        "[optimizer]\nkind = \"lm\"\nmax_iters = 60\n"
        "[init]\nn_restarts = 1\n"
    )
    out = str(tmp_path / "out")
    result = invoke("--out", out, "optimize", "-c", str(config))
    assert result.exit_code == 0, result.output
