#!/usr/bin/env python3
"""
Integration tests for the command line
Drives every Typer command through CliRunner
"""

import sys
import os
import json

import pandas as pd
import pytest
from typer.testing import CliRunner

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from cli import app
from bdglab.checks import CHECKS
from bdglab.experiments import CSV_COLUMNS

pytestmark = pytest.mark.integration

runner = CliRunner()


@pytest.fixture
def tree_config(tmp_path):
    path = tmp_path / "tree.json"
    path.write_text(json.dumps({
        "name": "cli-tree",
        "experiment": "bdg_ratio",
        "norm": {"kind": "lp", "p": 2, "dim": 2},
        "family": "paley_walsh",
        "family_params": {"depth": 3, "exhaustive": True},
        "p_list": [1, 2],
        "mc_samples": 200,
    }))
    return str(path)


def test_list_checks():
    """Every registered check is listed"""
    result = runner.invoke(app, ["list-checks"])
    assert result.exit_code == 0
    for check in CHECKS:
        assert check.id in result.output


def test_gamma_exact_branch():
    """gamma(I_3) under lp(2) is sqrt(3)"""
    result = runner.invoke(app, ["gamma", "--norm", "lp2", "--dim", "3"])
    assert result.exit_code == 0
    assert "1.732051" in result.output
    assert "exact" in result.output


def test_gamma_bad_norm():
    """Unknown norm labels exit 1"""
    result = runner.invoke(app, ["gamma", "--norm", "euclid", "--dim", "3"])
    assert result.exit_code == 1


def test_run_writes_reports(tree_config, tmp_path):
    """run writes <name>.json and <name>.csv"""
    out = tmp_path / "runs"
    result = runner.invoke(app, ["run", tree_config, "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert (out / "cli-tree.json").exists()
    frame = pd.read_csv(out / "cli-tree.csv")
    assert list(frame.columns) == CSV_COLUMNS
    assert "ratio=" in result.output


def test_run_missing_config(tmp_path):
    """A missing config exits 1"""
    result = runner.invoke(app, ["run", str(tmp_path / "nope.json")])
    assert result.exit_code == 1


def test_probe_umd():
    """Prints the bound for each rung of the ladder"""
    result = runner.invoke(app, ["probe-umd", "--p", "2", "--depth", "3", "--dim", "2", "--norm", "lp1",
                                 "--budget", "60", "--seed", "1", "--ladder"])
    assert result.exit_code == 0, result.output
    assert result.output.count("beta >=") == 2


def test_probe_umd_rejects_deep_trees():
    """Depth above the exhaustive limit exits 1"""
    result = runner.invoke(app, ["probe-umd", "--depth", "15", "--dim", "1", "--norm", "lp2"])
    assert result.exit_code == 1


def test_sweep(tree_config, tmp_path):
    """dims x norms runs in one CSV"""
    result = runner.invoke(app, ["sweep", tree_config, "--dims", "1,2", "--ps", "2",
                                 "--norms", "lp2,lp1", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "cli-tree-sweep.csv")
    assert len(frame) == 4
    assert set(frame["norm"]) == {"lp2", "lp1"}
    assert set(frame["d"]) == {1, 2}


def test_simulate(tree_config, tmp_path):
    """Path and covariation dumps"""
    result = runner.invoke(app, ["simulate", tree_config, "--count", "3", "--out", str(tmp_path)])
    assert result.exit_code == 0, result.output
    paths = pd.read_csv(tmp_path / "cli-tree-paths.csv")
    assert paths["replication"].nunique() == 3
    cov = pd.read_csv(tmp_path / "cli-tree-covariation.csv")
    assert "m_22" in cov.columns


def test_verify_selected_checks(tmp_path):
    """A passing subset exits 0 and writes the summary"""
    summary = tmp_path / "verify.json"
    result = runner.invoke(app, ["verify", "--quick", "--seed", "3", "--only", "hilbert_identities,ito_identity",
                                 "--report", str(summary)])
    assert result.exit_code == 0, result.output
    assert "All 2 checks passed" in result.output
    data = json.loads(summary.read_text())
    assert [c["id"] for c in data["checks"]] == ["hilbert_identities", "ito_identity"]


def test_verify_unknown_check():
    """Unknown check ids exit 1"""
    result = runner.invoke(app, ["verify", "--quick", "--only", "no_such_check"])
    assert result.exit_code == 1


if __name__ == "__main__":
    pytest.main([__file__])
