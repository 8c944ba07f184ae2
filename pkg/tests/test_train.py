"""Training procedures: stop-gradient steps, uncertainty training, ensembles,
distillation, offline value learning."""

import dataclasses

import numpy as np
import pytest

from uvu_lab import envs, net, train
from uvu_lab.envs import ChainPolicy, make_chain
from uvu_lab.net import MlpSpec, PracticalArchSpec
from uvu_lab.train import TrainConfig


def _chain_batch(z=0.5, n_states=5, seed=0, divergence="all"):
    mdp = make_chain(n_states, 0.7, divergence_state=divergence)
    ds = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=seed)
    ds = envs.resample_next_actions(ds, mdp, ChainPolicy(z=z), seed=seed + 1)
    x = envs.encode_chain_inputs(mdp, ds.states[:, 0], ds.actions, np.full(len(ds), z))
    xp = envs.encode_chain_inputs(mdp, ds.next_states[:, 0], ds.next_actions, np.full(len(ds), z))
    gv = np.where(ds.done, 0.0, mdp.discount)
    return mdp, ds, x, xp, gv


class TestConfig:
    def test_table_defaults(self):
        cfg = TrainConfig()
        assert cfg.discount == 0.9
        assert cfg.batch_size == 512
        assert cfg.target_update_interval == 256
        assert cfg.target_polyak == 1.0
        assert cfg.learning_rate == 3e-4
        assert cfg.resolved_adam_eps() == 0.005 / 512

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainConfig(optimizer="lbfgs")


class TestTdStep:
    def test_gamma_zero_equals_regression(self):
        _, _, x, xp, _ = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(8,), n_heads=2)
        cfg = TrainConfig(learning_rate=0.05, batch_size=None, n_steps=1, optimizer="sgd")
        rng = np.random.default_rng(0)
        targets = rng.standard_normal((x.shape[0], 2))
        p1 = net.init_params(spec, 1)
        p2 = p1.copy()
        train.td_step(spec, p1, x, xp, targets, 0.0, p1, cfg)
        train.regression_step(spec, p2, x, targets, cfg)
        np.testing.assert_array_equal(p1, p2)

    def test_self_loop_bellman_fixed_point(self):
        # one self-transition with reward c converges to c / (1 - gamma)
        spec = MlpSpec(input_dim=2, hidden_widths=())
        p = net.init_params(spec, 0)
        x = np.array([[1.0, 0.0]])
        cfg = TrainConfig(learning_rate=0.2, batch_size=None, n_steps=1, optimizer="sgd")
        c, gamma = 1.5, 0.8
        for _ in range(3000):
            train.td_step(spec, p, x, x, np.array([c]), gamma, p, cfg)
        assert abs(net.forward(spec, p, x[0])[0] - c / (1 - gamma)) < 1e-8

    def test_stop_gradient_decomposition(self):
        # the applied gradient carries no component through the bootstrap
        # term: adding the bootstrap-path term reproduces the full gradient
        _, _, x, xp, gv = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(10,), n_heads=1, sigma_b=0.3)
        p = net.init_params(spec, 2)
        rewards = np.random.default_rng(3).standard_normal(x.shape[0])
        cfg = TrainConfig(learning_rate=1.0, batch_size=None, n_steps=1, optimizer="sgd")
        p_after = p.copy()
        train.td_step(spec, p_after, x, xp, rewards, gv, p, cfg)
        g_semi = (p - p_after) / cfg.learning_rate

        f_x, cache_x = net.forward_with_cache(spec, p, x)
        f_xp, cache_xp = net.forward_with_cache(spec, p, xp)
        resid = gv[:, None] * f_xp + rewards[:, None] - f_x
        b = x.shape[0]
        expected_semi = net.backprop(spec, p, cache_x, -resid / b)
        np.testing.assert_allclose(g_semi, expected_semi, atol=1e-12)
        bootstrap_path = net.backprop(spec, p, cache_xp, gv[:, None] * resid / b)

        # finite-difference of the full (no stop-gradient) loss
        def full_loss(q):
            fx = net.forward(spec, q, x)
            fxp = net.forward(spec, q, xp)
            r = gv[:, None] * fxp + rewards[:, None] - fx
            return 0.5 * np.sum(r**2) / b

        rng = np.random.default_rng(4)
        idx = rng.choice(p.size, 40, replace=False)
        h = 1e-6
        for i in idx:
            pp, pm = p.copy(), p.copy()
            pp[i] += h
            pm[i] -= h
            fd = (full_loss(pp) - full_loss(pm)) / (2 * h)
            full_i = expected_semi[i] + bootstrap_path[i]
            assert abs(fd - full_i) < 1e-5 * max(1.0, abs(fd))

    def test_divergence_abort(self):
        spec = MlpSpec(input_dim=1, hidden_widths=())
        p = net.init_params(spec, 0)
        x, xp = np.array([[1.0]]), np.array([[2.0]])
        cfg = TrainConfig(learning_rate=0.5, batch_size=None, n_steps=1, optimizer="sgd")
        with pytest.raises(train.DivergenceError):
            for _ in range(5000):
                train.td_step(spec, p, x, xp, np.array([1.0]), 0.9, p, cfg)


class TestUvuTheory:
    def test_synthetic_rewards_recomputation(self):
        mdp, _, x, xp, gv = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(8,), n_heads=3)
        model = train.init_uvu_model(spec, mdp.discount, seed=0)
        r = train.uvu_synthetic_rewards(model, x, xp, gv)
        g_x = net.forward(spec, model.target.values, x)
        g_xp = net.forward(spec, model.target.values, xp)
        np.testing.assert_allclose(r, g_x - gv[:, None] * g_xp, atol=1e-14)

    def test_gamma_zero_reduces_to_distillation_reward(self):
        mdp, _, x, xp, _ = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(8,), n_heads=2)
        model = train.init_uvu_model(spec, 0.0, seed=1)
        r = train.uvu_synthetic_rewards(model, x, xp, 0.0)
        np.testing.assert_array_equal(r, net.forward(spec, model.target.values, x))

    def test_terminal_bootstrap_masked(self):
        mdp, ds, x, xp, gv = _chain_batch(z=1.0)
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(8,), n_heads=1)
        model = train.init_uvu_model(spec, mdp.discount, seed=2)
        r = train.uvu_synthetic_rewards(model, x, xp, gv)
        g_x = net.forward(spec, model.target.values, x)
        terminal = ds.done
        np.testing.assert_allclose(r[terminal], g_x[terminal], atol=1e-14)

    def test_online_copy_of_target_never_moves(self):
        # forcing the online heads to the frozen target gives zero loss and
        # zero parameter motion under full-batch descent
        mdp, _, x, xp, gv = _chain_batch(z=0.6)
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(12,), n_heads=2)
        model = train.init_uvu_model(spec, mdp.discount, seed=3)
        forced = model.target.values.copy()
        model = train.UvuModel(spec, net.ParamVector(forced, "vartheta"), model.target, mdp.discount)
        cfg = TrainConfig(learning_rate=0.1, batch_size=None, n_steps=5, optimizer="sgd", convergence_tol=0.0)
        losses = train.uvu_train(model, x, xp, gv, cfg)
        assert max(losses) < 1e-28
        np.testing.assert_array_equal(model.online.values, model.target.values)

    def test_untrained_copy_zero_error(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(6,), n_heads=2)
        model = train.init_uvu_model(spec, 0.5, seed=4)
        forced = train.UvuModel(spec, net.ParamVector(model.target.values.copy(), "vartheta"), model.target, 0.5)
        eps_sq, half = train.uvu_error(forced, np.random.default_rng(0).standard_normal((3, 4)))
        assert np.all(eps_sq == 0) and np.all(half == 0)

    def test_full_coverage_drives_error_down(self):
        mdp, _, x, xp, gv = _chain_batch(z=1.0)
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(), n_heads=4)  # linear: exact convergence
        model = train.init_uvu_model(spec, mdp.discount, seed=5)
        cfg = TrainConfig(learning_rate=0.3, batch_size=None, n_steps=30000, optimizer="sgd", convergence_tol=1e-10)
        train.uvu_train(model, x, xp, gv, cfg)
        _, half = train.uvu_error(model, x)
        assert np.all(half < 1e-6)

    def test_truncated_coverage_keeps_error(self):
        mdp, _, x, xp, gv = _chain_batch(z=0.0, divergence=None)
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(), n_heads=4)
        model = train.init_uvu_model(spec, mdp.discount, seed=6)
        cfg = TrainConfig(learning_rate=0.3, batch_size=None, n_steps=20000, optimizer="sgd", convergence_tol=1e-10)
        train.uvu_train(model, x, xp, gv, cfg)
        early = envs.encode_chain_inputs(mdp, [0, 1], [0, 0], [0.0, 0.0])
        _, half = train.uvu_error(model, early)
        assert np.all(half > 1e-4)


class TestRnd:
    def test_interpolation_on_training_set(self):
        _, _, x, _, _ = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(), n_heads=2)
        model = train.init_rnd_model(spec, seed=0)
        cfg = TrainConfig(learning_rate=0.3, batch_size=None, n_steps=20000, optimizer="sgd", convergence_tol=1e-11)
        train.rnd_train(model, x, cfg)
        assert np.all(train.rnd_error(model, x) < 1e-8)

    def test_predictor_target_roles(self):
        spec = MlpSpec(input_dim=3, hidden_widths=(4,))
        model = train.init_rnd_model(spec, seed=1)
        assert model.predictor.role == "rnd_predictor"
        with pytest.raises(ValueError):
            model.target.values[0] = 0.0


class TestEnsemble:
    def test_identical_members_zero_variance(self):
        _, _, x, xp, gv = _chain_batch()
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(6,), n_heads=1)
        model = train.init_ensemble(spec, 3, seed=0)
        shared = model.members[0].values.copy()
        for m in model.members:
            m.values[:] = shared
        cfg = TrainConfig(learning_rate=0.05, batch_size=None, n_steps=50, optimizer="sgd", convergence_tol=0.0)
        train.ensemble_train(model, x, xp, np.zeros(x.shape[0]), gv, cfg)
        outs = train.ensemble_outputs(model, x)
        assert np.var(outs, axis=0).max() < 1e-30

    def test_prior_composition(self):
        spec = MlpSpec(input_dim=4, hidden_widths=(5,), n_heads=1)
        model = train.init_ensemble(spec, 2, seed=1, prior_scale=1.0)
        x = np.random.default_rng(0).standard_normal((3, 4))
        out = train.ensemble_member_output(model, 0, x)
        trainable = net.forward(spec, model.members[0].values, x)
        prior = net.forward(spec, model.priors[0].values, x)
        np.testing.assert_allclose(out, trainable + 1.0 * prior, atol=1e-14)

    def test_trained_member_with_prior_solves_td(self):
        # member = trainable + prior must satisfy the value equations, so the
        # trainable part absorbs the prior's inconsistency
        _, _, x, xp, gv = _chain_batch(z=1.0)
        spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(), n_heads=1)
        model = train.init_ensemble(spec, 1, seed=3, prior_scale=0.7)
        rewards = np.random.default_rng(5).standard_normal(x.shape[0])
        cfg = TrainConfig(learning_rate=0.3, batch_size=None, n_steps=30000, optimizer="sgd", convergence_tol=1e-12)
        train.ensemble_train(model, x, xp, rewards, gv, cfg)
        member = train.ensemble_member_output(model, 0, x)[:, 0]
        member_next = train.ensemble_member_output(model, 0, xp)[:, 0]
        resid = gv * member_next + rewards - member
        assert np.abs(resid).max() < 1e-6


class TestUvuBootstrap:
    def test_zero_error_returns_q(self):
        q = np.random.default_rng(0).standard_normal((4, 3))
        eps = np.zeros((4, 3, 5))
        out = train.uvu_bootstrap_q(q, eps)
        for k in range(5):
            np.testing.assert_array_equal(out[:, :, k], q)

    def test_hand_set_offset(self):
        q = np.zeros((2, 2))
        eps = np.full((2, 2, 3), 0.25)
        assert np.all(train.uvu_bootstrap_q(q, eps) == 0.25)

    def test_distinct_greedy_actions_possible(self):
        q = np.zeros((1, 3))
        eps = np.zeros((1, 3, 2))
        eps[0, 0, 0] = 1.0
        eps[0, 2, 1] = 1.0
        a = np.argmax(train.uvu_bootstrap_q(q, eps), axis=1)[0]
        assert a[0] == 0 and a[1] == 2


class TestPropagatedMyopicErrors:
    def test_prior_forward_rule_prevents_underestimation(self):
        # propagated distillation errors along a diverging policy: without
        # the in-forward prior term the intrinsic values stay near zero at
        # early states (the off-data action's value is never trained), with
        # it the off-data myopic error is carried back
        mdp = make_chain(5, 0.8, divergence_state="all")
        ds = envs.rollout_chain(mdp, ChainPolicy(z=1.0), 1, seed=0)
        spec = MlpSpec(input_dim=envs.chain_input_dim(mdp), hidden_widths=(48,), n_heads=16, sigma_b=0.1)
        cfg = TrainConfig(learning_rate=0.1, batch_size=None, n_steps=4000, optimizer="sgd", seed=1, convergence_tol=0.0)
        z_grid = [0.2]
        with_prior = train.chain_rnd_prior_heatmap(mdp, ds, z_grid, spec, cfg, seed=2, with_prior=True)
        without = train.chain_rnd_prior_heatmap(mdp, ds, z_grid, spec, cfg, seed=2, with_prior=False)
        assert with_prior[0, 0] > 0.1  # early-state value uncertainty flagged
        assert without[0, 0] < 0.05  # plain propagation underestimates it
        assert with_prior[0, 0] > without[0, 0] + 0.3


def _tiny_grid_dataset(n_steps=400, seed=0):
    env = envs.make_gridworld(5, seed=seed, layout_pool=2)

    class RandomAgent:
        def select_action(self, obs, z, rng):
            return int(rng.integers(4))

        def record(self, *a):
            pass

    return envs.collect_gridworld_dataset(env, RandomAgent(), n_steps, seed=seed + 1)


class TestPracticalTraining:
    def test_empty_dataset_rejected(self):
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=8, trunk_widths=(8,), n_actions=4)
        ds = _tiny_grid_dataset(0)
        with pytest.raises(ValueError):
            train.dqn_offline_train(ds, arch, TrainConfig(n_steps=1))

    def test_dqn_step_reduces_fixed_batch_loss(self):
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=16, trunk_widths=(16,), n_actions=4)
        ds = _tiny_grid_dataset(300)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=128, n_steps=200, seed=0, use_float32=True)
        metrics = []
        train.dqn_offline_train(ds, arch, cfg, metrics)
        assert metrics[-1][1] < metrics[0][1]

    def test_bdqnp_member_checkpoints_distinct(self):
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=8, trunk_widths=(8,), n_actions=4)
        ds = _tiny_grid_dataset(200)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=64, n_steps=20, seed=1, use_float32=True)
        model = train.bdqnp_offline_train(ds, arch, cfg, n_members=3, prior_scale=1.0)
        assert len(model.members) == 3
        assert not np.array_equal(model.members[0].params, model.members[1].params)

    def test_uvu_uncertainty_nonnegative(self):
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=8, trunk_widths=(8,), n_actions=4)
        ds = _tiny_grid_dataset(200)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=64, n_steps=30, seed=2, use_float32=True)
        model = train.uvu_offline_train(ds, arch, cfg, n_heads=4)
        z = np.zeros(6)
        z[0] = 1.0
        u = model.uncertainty(ds.states[0], 1, z)
        assert u >= 0.0

    def test_rnd_prior_uncertainty_adds_myopic_term(self):
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=8, trunk_widths=(8,), n_actions=4)
        ds = _tiny_grid_dataset(200)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=64, n_steps=30, seed=3, use_float32=True)
        model = train.rnd_offline_train(ds, arch, cfg, n_heads=4, with_prior=True)
        z = np.zeros(6)
        z[0] = 1.0
        s = ds.states[0]
        myopic = model.myopic_error(np.atleast_2d(s).astype(np.float32), np.atleast_2d(z).astype(np.float32))[0, 1]
        q_intr = model.intrinsic.q_values(np.atleast_2d(s).astype(np.float32), np.atleast_2d(z).astype(np.float32))[0, 1]
        assert abs(model.uncertainty(s, 1, z) - (q_intr + myopic)) < 1e-6

    def test_offline_dqn_beats_random_policy(self):
        # seeded A/B comparison on an easy two-layout grid
        env = envs.make_gridworld(5, seed=31, layout_pool=2)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=128, n_steps=6000, discount=0.9, seed=5, use_float32=True)
        arch = PracticalArchSpec(state_dim=35, task_dim=6, embed_width=64, trunk_widths=(64, 64, 64), n_actions=4)
        agent = train.OnlineDqnAgent(arch, cfg, seed=32, warmup=300)
        ds = envs.collect_gridworld_dataset(env, agent, 6000, seed=33)

        def greedy_return(model, seed):
            e = envs.make_gridworld(5, seed=31, layout_pool=2)
            rng = np.random.default_rng(seed)
            rets = []
            for _ in range(10):
                obs = e.reset()
                z = e.task_one_hot()
                tot, done = 0.0, False
                while not done:
                    a = model.greedy_action(obs, z) if model else int(rng.integers(4))
                    obs, r, done = e.step(a)
                    tot += r
                rets.append(tot)
            return rets

        from scipy import stats as st

        trained, rand = [], []
        for s in range(5):
            dqn = train.dqn_offline_train(ds, arch, dataclasses.replace(cfg, n_steps=2500, seed=50 + s))
            trained.append(np.mean(greedy_return(dqn, 60 + s)))
            rand.append(np.mean(greedy_return(None, 60 + s)))
        p = st.ttest_ind(trained, rand, equal_var=False, alternative="greater").pvalue
        assert p < 0.05, (trained, rand)
