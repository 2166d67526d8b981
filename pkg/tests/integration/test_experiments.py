#!/usr/bin/env python3
"""
Integration tests for the experiment harness
Runs every experiment kind on small ensembles and checks the reported ratios
against the inequalities they estimate
"""

import sys
import os
import json
import logging
import math

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from bdglab.errors import ConfigError
from bdglab.estimators import within
from bdglab.experiments import (
    ExperimentConfig,
    FamilyParams,
    IntegrandSpec,
    Records,
    TransformSpec,
    bdg_ratio,
    domination_check,
    function_space_ratio,
    independent_increments_ratio,
    ito_ratio,
    lowp_continuous,
    parse_config,
    run_experiment,
    run_id_for,
    simulate_ensemble,
    summarize,
    umd_probe,
)
from bdglab.norms import INF, lp
from bdglab.quadvar import covariation_form

pytestmark = pytest.mark.integration

CONFIG_DIR = os.path.join(os.path.dirname(__file__), '..', '..', 'configs')


def _tree_config(name="tree", d=1, depth=6, **kwargs):
    return ExperimentConfig(
        name=name,
        norm=lp(2, d),
        family="paley_walsh",
        family_params=FamilyParams(depth=depth, exhaustive=True),
        p_list=kwargs.pop("p_list", [1.0, 2.0, 4.0]),
        **kwargs,
    )


class TestBdgRatio:
    """E sup ||M||^p against E gamma([[M]])^p"""

    def test_exhaustive_hilbert_tree(self):
        """Scalar trees: ratio in the Doob bracket, terminal ratio exactly 1 at p = 2"""
        report = bdg_ratio(_tree_config())
        assert len(report.rows) == 3
        row = report.row(2.0)
        assert row.exact
        assert row.lhs_stderr == 0.0
        assert row.replications == 2**6
        assert 1.0 - 1e-12 <= row.ratio <= 4.0
        assert row.extra["terminal_ratio"] == pytest.approx(1.0, rel=1e-12)
        assert row.doob_ok is True
        assert row.env_min <= row.env_max
        assert report.row(1.0).doob_ok is None

    def test_worker_count_does_not_change_report(self):
        """Same config, one or two workers, same numbers"""
        cfg = ExperimentConfig(
            name="workers",
            norm=lp(INF, 2),
            family="gaussian_walk",
            family_params=FamilyParams(steps=8),
            p_list=[1.0, 2.0],
            replications=12,
            mc_samples=300,
        )
        a, b = bdg_ratio(cfg, workers=1), bdg_ratio(cfg, workers=2)
        for ra, rb in zip(a.rows, b.rows):
            assert (ra.lhs, ra.rhs, ra.ratio, ra.ratio_stderr) == (rb.lhs, rb.rhs, rb.ratio, rb.ratio_stderr)
        assert a.run_id == b.run_id

    def test_report_frame(self):
        """One CSV row per exponent"""
        frame = bdg_ratio(_tree_config(depth=4)).to_frame()
        assert list(frame["p"]) == [1.0, 2.0, 4.0]
        assert set(frame["norm"]) == {"lp2"}

    def test_row_lookup(self):
        """Unknown exponents raise KeyError"""
        report = bdg_ratio(_tree_config(depth=3, p_list=[2.0]))
        assert report.row(2.0, norm="lp2").p == 2.0
        with pytest.raises(KeyError):
            report.row(3.0)


class TestItoRatio:
    """Stochastic integrals of elementary integrands"""

    def _config(self, integrand, **kwargs):
        return ExperimentConfig(
            name="ito",
            experiment="ito_ratio",
            norm=lp(2, 2),
            family="brownian_proxy",
            family_params=FamilyParams(steps=64, driver_dim=1),
            integrand=integrand,
            p_list=[1.0, 2.0],
            replications=kwargs.pop("replications", 100),
            **kwargs,
        )

    def test_zero_integrand_is_degenerate(self):
        """Zero right-hand side gives NaN ratios and a degenerate flag"""
        report = ito_ratio(self._config(IntegrandSpec(kind="zero"), replications=5))
        for row in report.rows:
            assert row.degenerate
            assert math.isnan(row.ratio)
            assert row.lhs == 0.0
        assert report.notes["integrand"] == "zero"

    def test_constant_integrand(self):
        """Phi = (1, 1)^T on a scalar driver stays in the Doob bracket"""
        report = ito_ratio(self._config(IntegrandSpec(kind="constant")))
        row = report.row(2.0)
        assert not row.degenerate
        assert 0.8 <= row.ratio <= 4.5
        assert row.doob_ok is True

    def test_random_predictable_integrand(self):
        """Adapted integrands run end to end"""
        cfg = self._config(IntegrandSpec(kind="random_predictable", intervals=4), replications=30)
        cfg = cfg.model_copy(update={"family_params": FamilyParams(steps=64, driver_dim=2)})
        report = ito_ratio(cfg)
        assert all(r.ratio > 0 for r in report.rows)

    def test_constant_matrix_shape_is_checked(self):
        """The integrand matrix must be d x k"""
        with pytest.raises(ConfigError):
            ito_ratio(self._config(IntegrandSpec(kind="constant", matrix=[[1.0, 2.0]]), replications=2))

    def test_poisson_integral(self):
        """The shipped Poisson config, shrunk"""
        with open(os.path.join(CONFIG_DIR, "poisson_ito.json")) as f:
            data = json.load(f)
        data.update(replications=60, mc_samples=500)
        report = run_experiment(parse_config(data))
        assert report.experiment == "ito_ratio"
        for row in report.rows:
            assert row.family == "compound_poisson"
            assert row.ratio > 0 or row.degenerate


class TestDomination:
    """Predictable contractions and sign transforms"""

    def test_sign_tables_on_a_hilbert_tree(self):
        """Worst ratio below 4, budget spent, hypotheses respected"""
        cfg = _tree_config("dom", d=2, depth=5, p_list=[2.0]).model_copy(
            update={"experiment": "domination", "search_budget": 100}
        )
        row = domination_check(cfg).rows[0]
        assert 1.0 <= row.ratio <= 4.0 * (1 + 1e-9)
        assert row.extra["evaluations"] == 100
        assert row.extra["identity_ratio"] == 1.0
        assert row.extra["zero_ratio"] == 0.0
        assert row.extra["weakly_subordinate"] is True
        # signs preserve E|M_T|^2 in a Hilbert space
        assert row.extra["terminal_ratio"] <= 1.0 + 1e-9
        assert row.extra["terminal_bound"] == pytest.approx(1.0)
        assert row.exact

    def test_random_rules_on_walks(self):
        """Non-tree families evaluate random predictable rules"""
        cfg = ExperimentConfig(
            name="dom-walk",
            experiment="domination",
            norm=lp(1, 2),
            family="gaussian_walk",
            family_params=FamilyParams(steps=8),
            p_list=[1.0],
            replications=40,
            search_budget=20,
        )
        row = domination_check(cfg).rows[0]
        assert row.extra["evaluations"] == 20
        assert row.extra["weakly_subordinate"] is True
        assert not row.exact
        assert row.ratio > 0

    def test_fixed_factors(self):
        """Configured factors are the only transform tried"""
        cfg = _tree_config("dom-fixed", depth=4, p_list=[2.0], experiment="domination",
                           transform=TransformSpec(factors=[0.5] * 4))
        row = domination_check(cfg).rows[0]
        assert row.extra["evaluations"] == 1
        # the identity is also a candidate, and it wins
        assert row.ratio == pytest.approx(1.0)

    def test_poisson_family_is_rejected(self):
        """No common grid for jump paths"""
        cfg = ExperimentConfig(name="dom-jumps", experiment="domination", norm=lp(2, 1),
                               family="compound_poisson", replications=4)
        with pytest.raises(ConfigError):
            domination_check(cfg)


class TestUmdProbe:
    """Lower bounds for the UMD constant"""

    def test_hilbert_value_is_one(self):
        """Signs are isometries of L^2 in a Hilbert space"""
        result = umd_probe(2.0, 4, 1, lp(2, 1), budget=200, rng=np.random.default_rng(0))
        assert result.value == pytest.approx(1.0, abs=1e-9)
        assert result.hilbert_constant == pytest.approx(1.0)
        assert result.evaluations <= 200

    def test_warm_start_is_monotone_in_dimension(self):
        """A zero-padded warm start keeps its value"""
        small = umd_probe(3.0, 4, 1, lp(1, 1), budget=300, rng=np.random.default_rng(1))
        assert small.value >= 1.0
        large = umd_probe(3.0, 4, 2, lp(1, 2), budget=300, rng=np.random.default_rng(2), warm_start=small)
        assert large.value >= small.value - 1e-12

    def test_errors(self):
        """Depth, dimension and exponent limits"""
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            umd_probe(2.0, 15, 1, lp(2, 1), rng=rng)
        with pytest.raises(ConfigError):
            umd_probe(2.0, 4, 2, lp(2, 1), rng=rng)
        with pytest.raises(ConfigError):
            umd_probe(0.5, 4, 1, lp(2, 1), rng=rng)


class TestContinuousAndIndependent:
    """Brownian proxies and Gaussian walks"""

    def test_lowp_scaling(self):
        """Horizon x4 scales both sides by 2^p"""
        cfg = ExperimentConfig(
            name="lowp",
            experiment="lowp_continuous",
            norm=lp(2, 1),
            family="brownian_proxy",
            family_params=FamilyParams(steps_list=[64, 128]),
            p_list=[0.5, 1.0],
            replications=200,
            mc_samples=2,
        )
        report = lowp_continuous(cfg)
        assert len(report.rows) == 4
        assert {r.extra["steps"] for r in report.rows} == {64, 128}
        scaling = report.notes["scaling"]["0.5"]
        assert scaling["passed"]
        for side in ("lhs", "rhs"):
            assert scaling[f"{side}_stderr"] > 0
            assert within(scaling[side], math.sqrt(2.0), scaling[f"{side}_stderr"])
            # the 4T ensemble is drawn independently, not rescaled
            assert abs(scaling[side] - math.sqrt(2.0)) > 1e-9
        assert report.notes["scaling"]["1.0"]["expected"] == 2.0
        assert set(report.notes["stable"]) == {"0.5", "1.0"}

    def test_lowp_needs_a_grid_size(self):
        """An empty steps_list is a config error"""
        cfg = ExperimentConfig(
            name="lowp-empty",
            experiment="lowp_continuous",
            norm=lp(2, 1),
            family="brownian_proxy",
            family_params=FamilyParams(steps_list=[]),
            p_list=[0.5],
            replications=4,
        )
        with pytest.raises(ConfigError):
            lowp_continuous(cfg)

    def test_small_p_needs_brownian_proxy(self):
        """p < 1 only for continuous paths"""
        with pytest.raises(ConfigError):
            parse_config({"name": "x", "norm": {"kind": "lp", "p": 2, "dim": 1}, "p_list": [0.5]})
        cfg = ExperimentConfig(name="x", norm=lp(2, 1), family="gaussian_walk", p_list=[1.0])
        with pytest.raises(ConfigError):
            lowp_continuous(cfg)

    def test_independent_increments(self):
        """Three norms times the dimension list, each with a tree contrast"""
        cfg = ExperimentConfig(
            name="indep",
            experiment="independent_increments",
            norm=lp(2, 1),
            family="gaussian_walk",
            family_params=FamilyParams(steps=8, dims=[1, 2]),
            p_list=[2.0],
            replications=20,
            mc_samples=500,
        )
        report = independent_increments_ratio(cfg)
        assert len(report.rows) == 6
        assert {r.norm for r in report.rows} == {"lp1", "lpinf", "lp2"}
        assert all("paley_walsh_ratio" in r.extra for r in report.rows)
        assert set(report.notes["flatness"]) == {"lp1", "lpinf", "lp2"}
        assert all(v >= 1.0 for v in report.notes["flatness"]["lp2"].values())


class TestFunctionSpace:
    """Square-function comparisons"""

    def test_euclidean_gamma_is_the_square_function(self):
        """In lp(2) both right-hand sides coincide"""
        cfg = _tree_config("fs", d=2, depth=5, p_list=[1.0, 2.0]).model_copy(update={"experiment": "function_space"})
        report = function_space_ratio(cfg)
        for row in report.rows:
            assert row.extra["gamma_over_square"] == pytest.approx(1.0, rel=1e-12)

    def test_mixed_norm_config(self):
        """The shipped mixed-norm config, shrunk"""
        with open(os.path.join(CONFIG_DIR, "function_space_mixed.json")) as f:
            data = json.load(f)
        data["family_params"]["depth"] = 4
        data["mc_samples"] = 300
        cfg = parse_config(data)
        assert cfg.dim == 4
        report = run_experiment(cfg)
        assert len(report.rows) == 2
        assert all(r.extra["gamma_over_square"] > 0 for r in report.rows)


class TestConfigAndSummaries:
    """Validation, run ids and degenerate rows"""

    @pytest.mark.parametrize("patch", [{"p_list": []}, {"replications": 0}, {"experiment": "nope"},
                                       {"p_list": [float("inf")]}])
    def test_invalid_configs(self, patch):
        """Validation errors become ConfigError"""
        data = {"name": "bad", "norm": {"kind": "lp", "p": 2, "dim": 1}}
        data.update(patch)
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_run_id(self):
        """Stable across a JSON round trip, sensitive to the seed"""
        cfg = _tree_config()
        again = parse_config(json.loads(json.dumps(cfg.model_dump(mode="json"))))
        assert run_id_for(cfg) == run_id_for(again)
        assert run_id_for(cfg) != run_id_for(cfg.model_copy(update={"master_seed": 1}))

    def test_degenerate_summary_warns(self, caplog):
        """Zero right-hand sides are flagged and logged"""
        rec = Records.from_rows([(0.0, 0.0, 0.0, 0.0, 0.0)] * 3)
        with caplog.at_level(logging.WARNING, logger="bdglab.experiments"):
            row = summarize(rec, 2.0, d=1, norm="lp2", family="gaussian_walk")
        assert row.degenerate
        assert math.isnan(row.ratio)
        assert row.doob_ok is None
        assert "degenerate" in caplog.text

    def test_simulate_ensemble_matches_records(self):
        """Dumped walk paths are the paths the ratio runs use"""
        cfg = ExperimentConfig(name="sim", norm=lp(2, 2), family="gaussian_walk",
                               family_params=FamilyParams(steps=6), replications=3)
        paths = simulate_ensemble(cfg)
        assert len(paths) == 3
        report = bdg_ratio(cfg.model_copy(update={"p_list": [2.0]}))
        expected = np.mean([np.trace(covariation_form(p).matrix) for p in paths])
        assert report.row(2.0).rhs == pytest.approx(expected, rel=1e-12)

    def test_simulate_ensemble_integrals(self):
        """ito_ratio configs dump the integral paths"""
        cfg = ExperimentConfig(name="sim-ito", experiment="ito_ratio", norm=lp(2, 2), family="brownian_proxy",
                               family_params=FamilyParams(steps=64, driver_dim=1), replications=2)
        paths = simulate_ensemble(cfg, count=2)
        assert all(p.family == "stochastic_integral" and p.dim == 2 for p in paths)
        with pytest.raises(ConfigError):
            simulate_ensemble(cfg, count=0)


if __name__ == "__main__":
    pytest.main([__file__])
