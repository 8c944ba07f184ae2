"""Tabular uncertainty mechanics on the chain."""

import numpy as np
import pytest

from uvu_lab import envs, tabular
from uvu_lab.envs import ChainPolicy, make_chain


@pytest.fixture
def chain4():
    mdp = make_chain(4, 0.7)
    ds = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=0)
    return mdp, ds


class TestInit:
    def test_head_count_and_independence(self):
        mdp = make_chain(4, 0.7)
        heads = tabular.init_tabular(mdp, 0, 4)
        assert len(heads) == 4
        assert not np.array_equal(heads[0].g, heads[1].g)

    def test_reproducible(self):
        mdp = make_chain(4, 0.7)
        a = tabular.init_tabular(mdp, 3, 1)[0]
        b = tabular.init_tabular(mdp, 3, 1)[0]
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.g, b.g)

    def test_gaussian_sampling(self):
        mdp = make_chain(6, 0.7)
        heads = tabular.init_tabular(mdp, 1, 128)
        n_entries = heads[0].g.size
        for h in heads:
            assert abs(h.g.mean()) < 4.0 / np.sqrt(n_entries)

    def test_target_frozen(self):
        mdp = make_chain(4, 0.7)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        with pytest.raises(ValueError):
            h.g[0, 0] = 1.0

    def test_head_count_validated(self):
        with pytest.raises(ValueError):
            tabular.init_tabular(make_chain(4, 0.7), 0, 0)


class TestSyntheticReward:
    def test_gamma_zero(self):
        mdp = make_chain(4, 0.0)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        r = tabular.tabular_synthetic_reward(h, mdp, 1, 0, 2, 0)
        assert r == h.g[1, 0]

    def test_terminal_bootstrap_zero(self):
        mdp = make_chain(4, 0.7)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        r = tabular.tabular_synthetic_reward(h, mdp, 2, 0, mdp.terminal_index, 0)
        assert r == h.g[2, 0]

    def test_matches_direct_recomputation(self):
        mdp = make_chain(5, 0.7)
        h = tabular.init_tabular(mdp, 5, 1)[0]
        r = tabular.tabular_synthetic_reward(h, mdp, 1, 0, 2, 1)
        assert abs(r - (h.g[1, 0] - 0.7 * h.g[2, 1])) < 1e-15

    def test_out_of_range(self):
        mdp = make_chain(4, 0.7)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        with pytest.raises(IndexError):
            tabular.tabular_synthetic_reward(h, mdp, 99, 0, 1, 0)


class TestSweep:
    def test_full_coverage_recovers_target(self, chain4):
        mdp, ds = chain4
        pol = ChainPolicy(z=1.0)
        for h in tabular.init_tabular(mdp, 0, 4):
            tabular.tabular_sweep(h, mdp, ds, pol, 50)
            for s in range(mdp.n_states - 1):
                assert abs(h.u[s, 0] - h.g[s, 0]) < 1e-12

    def test_truncated_coverage_leaves_errors(self, chain4):
        mdp, ds = chain4
        pol = ChainPolicy(z=0.0)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        tabular.tabular_sweep(h, mdp, ds, pol, 50)
        eps0 = h.u[2, 1] - h.g[2, 1]  # never-updated pair feeding the bootstrap
        assert abs(h.u[1, 0] - h.g[1, 0] - 0.7 * eps0) < 1e-12
        assert tabular.tabular_error(h, 0, 0) > 0

    def test_gamma_zero_one_sweep_regression(self):
        mdp = make_chain(4, 0.0)
        ds = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=0)
        h = tabular.init_tabular(mdp, 2, 1)[0]
        tabular.tabular_sweep(h, mdp, ds, ChainPolicy(z=1.0), 1)
        for i in range(len(ds)):
            s, a = int(ds.states[i, 0]), int(ds.actions[i])
            assert h.u[s, a] == h.g[s, a]

    def test_sweep_count_validated(self, chain4):
        mdp, ds = chain4
        h = tabular.init_tabular(mdp, 0, 1)[0]
        with pytest.raises(ValueError):
            tabular.tabular_sweep(h, mdp, ds, ChainPolicy(1.0), 0)


class TestError:
    def test_zero_when_equal(self):
        mdp = make_chain(4, 0.7)
        h = tabular.init_tabular(mdp, 0, 1)[0]
        h.u[:] = h.g
        assert tabular.tabular_error(h, 1, 0) == 0.0

    def test_deterministic_direct_subtraction(self):
        mdp = make_chain(4, 0.7)
        h = tabular.init_tabular(mdp, 9, 1)[0]
        assert tabular.tabular_error(h, 2, 1) == (h.u[2, 1] - h.g[2, 1]) ** 2


class TestZeroLossCertificate:
    def test_target_solves_its_own_problem(self):
        # the frozen table has zero TD error on every transition, any gamma
        for gamma in (0.0, 0.5, 0.9):
            mdp = make_chain(6, gamma, divergence_state="all")
            ds = envs.rollout_chain(mdp, ChainPolicy(z=0.7), 10, seed=3)
            h = tabular.init_tabular(mdp, 4, 1)[0]
            rng = np.random.default_rng(0)
            res = tabular.tabular_td_residuals(h, mdp, ds, ChainPolicy(z=0.2), h.g, rng)
            assert np.abs(res).max() < 1e-12


class TestMonotoneInformation:
    def test_coverage_extension_never_hurts(self):
        # full dataset vs one truncated before the divergence point: adding
        # the remaining transitions cannot increase converged error upstream
        mdp = make_chain(6, 0.7)
        full = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=0)
        import dataclasses

        truncated = dataclasses.replace(
            full,
            states=full.states[:2],
            actions=full.actions[:2],
            rewards=full.rewards[:2],
            tasks=full.tasks[:2],
            next_states=full.next_states[:2],
            next_actions=full.next_actions[:2],
            done=full.done[:2],
        )
        pol = ChainPolicy(z=1.0)
        for seed in range(5):
            h_full = tabular.init_tabular(mdp, seed, 1)[0]
            h_trunc = tabular.init_tabular(mdp, seed, 1)[0]
            tabular.tabular_sweep(h_full, mdp, full, pol, 60)
            tabular.tabular_sweep(h_trunc, mdp, truncated, pol, 60)
            for s in (0, 1):
                assert tabular.tabular_error(h_full, s, 0) <= tabular.tabular_error(h_trunc, s, 0) + 1e-12


class TestEnsembleVariance:
    def test_full_coverage_zero_variance(self, chain4):
        mdp, ds = chain4
        var = tabular.tabular_ensemble_variance(mdp, ds, ChainPolicy(z=1.0), 8, seed=0)
        for s in range(mdp.n_states - 1):
            assert var[s, 0] < 1e-20

    def test_divergent_policy_peaks_upstream(self, chain4):
        mdp, ds = chain4
        var = tabular.tabular_ensemble_variance(mdp, ds, ChainPolicy(z=0.0), 64, seed=1)
        assert var[0, 0] > 0 and var[1, 0] > 0
        assert var[2, 0] < 1e-20  # terminal-adjacent transition is determined

    def test_identical_seeds_zero_variance(self, chain4):
        mdp, ds = chain4
        tables = []
        for _ in range(2):
            v = tabular.tabular_ensemble_variance(mdp, ds, ChainPolicy(z=1.0), 2, seed=7)
            tables.append(v)
        np.testing.assert_array_equal(tables[0], tables[1])

    def test_member_count_validated(self, chain4):
        mdp, ds = chain4
        with pytest.raises(ValueError):
            tabular.tabular_ensemble_variance(mdp, ds, ChainPolicy(1.0), 1, seed=0)


class TestHeadEnsembleAgreement:
    def test_half_error_mean_matches_ensemble_variance(self):
        # the tabular image of the error/variance equivalence: mean over heads
        # of half squared errors matches member variance within Monte Carlo
        # error at matched counts
        mdp = make_chain(6, 0.7, divergence_state="all")
        ds = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=1)
        z = 0.4
        n = 128
        heads = tabular.init_tabular(mdp, 3, n)
        pol = ChainPolicy(z=z)
        for h in heads:
            tabular.tabular_sweep(h, mdp, ds, pol, 40)
        var = tabular.tabular_ensemble_variance(mdp, ds, pol, n, seed=4, n_sweeps=40)
        for s in (0, 1, 2):
            errs = np.array([tabular.tabular_error(h, s, 0) for h in heads])
            half_mean = 0.5 * errs.mean()
            se = 0.5 * errs.std(ddof=1) / np.sqrt(n) + var[s, 0] * np.sqrt(2.0 / n)
            assert abs(half_mean - var[s, 0]) < 3 * se


class TestExport:
    def test_table_csv(self, tmp_path):
        table = np.array([[1.0, 2.0], [3.0, 4.0]])
        path = str(tmp_path / "t.csv")
        tabular.export_table_csv(table, path)
        lines = open(path).read().strip().splitlines()
        assert lines[0] == "state,a0,a1"
        assert lines[1].startswith("s1,1,")
