#!/usr/bin/env python3
"""
Unit tests for the martingales module
Path containers, the four generator families, predictable transforms and the
martingale-property checker
"""

import sys
import os

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', '..'))

from bdglab.errors import DimensionMismatchError, EnumerationLimitError, PredictabilityError
from bdglab.martingales import (
    DyadicTree,
    MartingalePath,
    PathEnsemble,
    PredictableTransform,
    apply_transform,
    check_martingale,
    fixed_jumps,
    gaussian_jumps,
    gen_brownian_proxy,
    gen_compound_poisson,
    gen_gaussian_walk,
    gen_paley_walsh,
    leaf_bits,
    transform_ensemble,
)
from bdglab.norms import lp

pytestmark = pytest.mark.unit


class TestMartingalePath:
    """Grid path container"""

    def test_basic_properties(self):
        """Increments, terminal value, sup norm and index lookup"""
        path = MartingalePath([0.0, 0.5, 1.0], [[0.0, 0.0], [1.0, -1.0], [3.0, 0.0]], "deterministic")
        assert path.dim == 2 and path.steps == 2
        np.testing.assert_allclose(path.increments, [[1.0, -1.0], [2.0, 1.0]])
        np.testing.assert_allclose(path.terminal, [3.0, 0.0])
        assert path.sup_norm(lp(2, 2)) == pytest.approx(3.0)
        assert path.terminal_norm(lp(1, 2)) == pytest.approx(3.0)
        assert path.index_of(0.7) == 1
        assert path.jumps.shape == (0, 2)

    def test_scalar_values_become_a_column(self):
        """1-d values are a path in dimension 1"""
        path = MartingalePath([0.0, 1.0], [0.0, 2.0], "deterministic")
        assert path.values.shape == (2, 1)

    def test_validation(self):
        """Start at zero, increasing grid, known family"""
        with pytest.raises(ValueError):
            MartingalePath([0.0, 1.0], [1.0, 2.0], "deterministic")
        with pytest.raises(ValueError):
            MartingalePath([0.0, 0.0], [0.0, 2.0], "deterministic")
        with pytest.raises(ValueError):
            MartingalePath([0.0, 1.0], [0.0, 2.0], "levy")
        with pytest.raises(DimensionMismatchError):
            MartingalePath([0.0, 1.0, 2.0], [0.0, 2.0], "deterministic")


class TestPaleyWalsh:
    """Dyadic tree martingales"""

    def test_exhaustive_enumeration(self):
        """All leaves, equal weights, exact mean zero"""
        ens = gen_paley_walsh(5, 2, rng=np.random.default_rng(0), exhaustive=True)
        assert len(ens) == 32 and ens.exact
        np.testing.assert_allclose(ens.weights, 1.0 / 32)
        terminal = ens.stacked()[:, -1, :]
        np.testing.assert_allclose(ens.weights @ terminal, 0.0, atol=1e-12)
        assert [p.leaf for p in ens] == list(range(32))

    def test_constant_tree_second_moment(self):
        """Steps +-1 give E M_N^2 = N"""
        tree = DyadicTree.constant(6, [1.0])
        ens = gen_paley_walsh(6, 1, tree=tree)
        assert ens.expectation([p.terminal[0] ** 2 for p in ens]) == pytest.approx(6.0)
        assert ens.expectation([p.sup_norm(lp(2, 1)) for p in ens]) >= ens.expectation(
            [p.terminal_norm(lp(2, 1)) for p in ens]
        )

    def test_leaf_bits_follow_branches(self):
        """Bit 0 is the + branch, first step first"""
        np.testing.assert_array_equal(leaf_bits(np.array([0b101]), 3), [[1, 0, 1]])
        tree = DyadicTree.constant(3, [1.0])
        np.testing.assert_allclose(tree.increments(np.array([0b101]))[0, :, 0], [-1.0, 1.0, -1.0])

    def test_from_function_and_with_levels(self):
        """Node-indexed vectors"""
        tree = DyadicTree.from_function(3, lambda n, i: [float(n + i)])
        assert tree.depth == 3 and tree.dim == 1
        np.testing.assert_allclose(tree.levels[2][:, 0], [2.0, 3.0, 4.0, 5.0])
        swapped = tree.with_levels(0, np.array([[7.0]]))
        assert swapped.levels[0][0, 0] == 7.0
        with pytest.raises(DimensionMismatchError):
            DyadicTree((np.ones((1, 2)), np.ones((3, 2))))

    def test_sampled_mode(self):
        """Sampled leaves on a deeper tree"""
        ens = gen_paley_walsh(18, 2, rng=np.random.default_rng(1), exhaustive=False, count=50)
        assert len(ens) == 50 and not ens.exact
        assert ens.stacked().shape == (50, 19, 2)

    def test_depth_caps(self):
        """Exhaustive trees stop at 14, sampled at 20"""
        with pytest.raises(EnumerationLimitError):
            gen_paley_walsh(15, 1, rng=np.random.default_rng(0), exhaustive=True)
        with pytest.raises(EnumerationLimitError):
            gen_paley_walsh(21, 1, rng=np.random.default_rng(0), exhaustive=False, count=4)
        with pytest.raises(ValueError):
            gen_paley_walsh(4, 1, exhaustive=True)


class TestContinuousAndJumpFamilies:
    """Gaussian walks, Brownian proxy and compound Poisson"""

    def test_gaussian_walk_shapes_and_grid(self):
        """Unit steps by default, equal steps on [0, T] when T is given"""
        ens = gen_gaussian_walk(10, 3, None, np.random.default_rng(0), count=4)
        assert ens.stacked().shape == (4, 11, 3)
        np.testing.assert_allclose(ens[0].times, np.arange(11.0))
        ens = gen_gaussian_walk(8, 2, 0.5, np.random.default_rng(0), count=2, T=2.0)
        np.testing.assert_allclose(ens[0].times, np.linspace(0.0, 2.0, 9))

    def test_gaussian_walk_covariance(self):
        """A covariance matrix per step is honoured"""
        sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        ens = gen_gaussian_walk(4, 2, sigma, np.random.default_rng(2), count=20_000)
        inc = ens.stacked()[:, 1, :]
        np.testing.assert_allclose(np.cov(inc.T), sigma, atol=0.08)
        with pytest.raises(DimensionMismatchError):
            gen_gaussian_walk(4, 2, np.ones((3, 2, 2)), np.random.default_rng(2))

    def test_brownian_proxy(self):
        """Variance T at the horizon, at least 64 steps"""
        ens = gen_brownian_proxy(128, 1, 2.0, np.random.default_rng(3), count=5000)
        terminal = ens.stacked()[:, -1, 0]
        assert np.var(terminal) == pytest.approx(2.0, rel=0.1)
        assert ens[0].family == "brownian_proxy"
        with pytest.raises(ValueError):
            gen_brownian_proxy(32, 1, 1.0, np.random.default_rng(3))

    def test_compound_poisson_records_jumps(self):
        """Jumps sit on the grid and are the only increments"""
        ens = gen_compound_poisson(5.0, 1.0, gaussian_jumps(2), 8, np.random.default_rng(4), count=20)
        for path in ens:
            assert path.times[0] == 0.0 and path.times[-1] == pytest.approx(1.0)
            moved = np.flatnonzero(np.any(path.increments != 0.0, axis=1)) + 1
            np.testing.assert_array_equal(np.sort(moved), np.sort(path.jump_steps))
            np.testing.assert_allclose(path.jumps.sum(axis=0), path.terminal, atol=1e-12)

    def test_compound_poisson_symmetrized_fixed_jumps(self):
        """Fixed jumps come out as +-x"""
        ens = gen_compound_poisson(10.0, 1.0, fixed_jumps([1.0, 2.0]), 4, np.random.default_rng(5), count=10)
        for path in ens:
            for jump in path.jumps:
                assert np.allclose(np.abs(jump), [1.0, 2.0])

    def test_compound_poisson_validation(self):
        """Positive rate and horizon, rng required"""
        with pytest.raises(ValueError):
            gen_compound_poisson(0.0, 1.0, gaussian_jumps(1), 4, np.random.default_rng(0))
        with pytest.raises(ValueError):
            gen_compound_poisson(1.0, 1.0, gaussian_jumps(1), 4, None)


class TestPredictableTransform:
    """Contractions and sign transforms"""

    def test_identity_is_a_no_op(self):
        """All-ones factors"""
        path = gen_gaussian_walk(6, 2, None, np.random.default_rng(0))[0]
        out = apply_transform(path, PredictableTransform.identity(6))
        np.testing.assert_allclose(out.values, path.values)
        assert out.family == "transformed"

    def test_rule_sees_only_the_past(self):
        """A history-dependent rule gets values[0..k-1]"""
        seen = []

        def rule(k, history):
            seen.append(history.shape[0])
            return 0.5

        path = gen_gaussian_walk(4, 1, None, np.random.default_rng(1))[0]
        out = apply_transform(path, PredictableTransform(rule=rule))
        assert seen == [1, 2, 3, 4]
        np.testing.assert_allclose(out.values, 0.5 * path.values)

    def test_contract_violations(self):
        """Factors above 1, non-sign factors, wrong lengths"""
        path = gen_gaussian_walk(3, 1, None, np.random.default_rng(2))[0]
        with pytest.raises(PredictabilityError):
            apply_transform(path, PredictableTransform.constant([1.0, 1.5, 0.0]))
        with pytest.raises(PredictabilityError):
            apply_transform(path, PredictableTransform.constant([1.0, 0.5, 1.0], kind="sign"))
        with pytest.raises(DimensionMismatchError):
            apply_transform(path, PredictableTransform.constant([1.0, 1.0]))

    def test_tree_transform_uses_node_factors(self):
        """Step n+1 uses the factor of the node after n steps"""
        ens = gen_paley_walsh(3, 1, tree=DyadicTree.constant(3, [1.0]))
        signs = [np.array([1.0]), np.array([1.0, -1.0]), np.array([1.0, 1.0, 1.0, -1.0])]
        out = transform_ensemble(ens, PredictableTransform.on_tree(signs, kind="sign"))
        leaf = 0b110
        expected = np.array([-1.0, -1.0, 1.0]) * np.array([1.0, -1.0, -1.0])
        np.testing.assert_allclose(out[leaf].increments[:, 0], expected)
        assert out.exact and out.leaves is ens.leaves

    def test_tree_transform_needs_tree_paths(self):
        """Node-indexed transforms need a leaf"""
        path = gen_gaussian_walk(2, 1, None, np.random.default_rng(3))[0]
        tr = PredictableTransform.on_tree([np.array([1.0]), np.array([1.0, 1.0])])
        with pytest.raises(PredictabilityError):
            apply_transform(path, tr)
        with pytest.raises(DimensionMismatchError):
            PredictableTransform.on_tree([np.array([1.0]), np.array([1.0, 1.0, 1.0])])


class TestMartingaleCheck:
    """Conditional-mean checker"""

    def test_exhaustive_tree_is_exact(self):
        """Node-by-node conditional means vanish"""
        ens = gen_paley_walsh(6, 2, rng=np.random.default_rng(0), exhaustive=True)
        result = check_martingale(ens)
        assert result.exact and result.passed
        assert result.groups == 2**6 - 1

    def test_drifting_tree_fails(self):
        """A drift breaks the node conditional means"""
        ens = gen_paley_walsh(4, 1, rng=np.random.default_rng(1), exhaustive=True)
        values = ens.stacked() + 0.1 * np.arange(5)[None, :, None]
        drifted = PathEnsemble.from_array(ens[0].times, values, "paley_walsh", exact=True,
                                          tree=ens.tree, leaves=ens.leaves)
        assert not check_martingale(drifted).passed

    def test_sampled_families_pass(self):
        """Gaussian walks and compound Poisson paths"""
        rng = np.random.default_rng(2)
        assert check_martingale(gen_gaussian_walk(16, 2, None, rng, count=2000)).passed
        assert check_martingale(gen_compound_poisson(4.0, 1.0, gaussian_jumps(2), 8, rng, count=2000)).passed

    def test_drifting_walk_fails(self):
        """The empirical check sees a drift"""
        ens = gen_gaussian_walk(8, 1, None, np.random.default_rng(3), count=2000)
        values = ens.stacked() + 0.5 * np.arange(9)[None, :, None]
        drifted = PathEnsemble.from_array(ens[0].times, values, "deterministic")
        result = check_martingale(drifted)
        assert not result.exact and not result.passed
        assert result.max_t_stat > 4.0

    def test_empty_ensemble(self):
        """Nothing to check"""
        with pytest.raises(ValueError):
            check_martingale(PathEnsemble(paths=(), weights=np.zeros(0)))


if __name__ == "__main__":
    pytest.main([__file__])
