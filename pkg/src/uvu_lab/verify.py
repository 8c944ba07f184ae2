"""Verification suites: closed-form theory against independent oracles.

Each check returns a :class:`CheckResult`; suites bundle checks for the CLI
and the acceptance tests.  Tolerances are fixed here, not configurable: the
Monte Carlo comparisons use 3 standard errors per entry (with a tiny absolute
floor for exactly-determined entries), algebraic identities use hard
thresholds, and every randomized check runs from a pinned seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import envs, kernels, linear_oracle as lo, net, posterior as po, tabular, train
from .net import MlpSpec


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: str = ""
    metrics: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.details}"


# ---------------------------------------------------------------------------
# Linear-feature chain instances
# ---------------------------------------------------------------------------

# (n_states, z_values, gamma, instance_seed, mc_seed)
ORACLE_INSTANCES = [
    (5, (0.0, 0.5, 1.0), 0.7, 0, 7),
    (6, (0.0, 0.25, 0.75, 1.0), 0.7, 101, 708),
    (7, (0.3, 0.9), 0.9, 202, 1409),
    (4, (0.0, 1.0), 0.5, 1303, 2110),
    (6, (0.1, 0.5, 0.8), 0.8, 404, 2811),
]


@dataclass
class ChainTheoryInstance:
    model: lo.LinearFeatureModel
    x_test: np.ndarray
    x_train: np.ndarray
    x_next: np.ndarray
    gamma: np.ndarray
    rewards: np.ndarray
    label: str

    def blocks(self):
        return self.model.kernel_blocks({"test": self.x_test, "train": self.x_train, "next": self.x_next})


def chain_theory_instance(
    n_states: int, z_values, gamma: float, seed, delta: float = 0.35, rich_test_set: bool = False
) -> ChainTheoryInstance:
    """Chain transitions over (state, action, z) tuples with near-orthonormal
    tuple features (same-state correlation delta^2), so the TD operator is
    comfortably positive definite while the kernel stays nontrivial.

    ``rich_test_set`` queries every training tuple plus the never-updated
    pairs at every z value (a spectrum of uncertainty levels); the default
    keeps a small mixed test set.
    """
    rng = np.random.default_rng(seed)
    registry: dict = {}

    def tuple_id(s, a, z):
        key = (s, a, round(float(z), 6))
        if key not in registry:
            registry[key] = len(registry)
        return registry[key]

    rows_train, rows_next, gammas = [], [], []
    for z in z_values:
        for s in range(n_states - 1):
            i = tuple_id(s, 0, z)
            if s + 1 == n_states - 1:
                j = tuple_id(s + 1, 0, z)
                gammas.append(0.0)  # transition into the absorbing end
            else:
                a_next = 0 if rng.random() < z else 1
                j = tuple_id(s + 1, a_next, z)
                gammas.append(gamma)
            rows_train.append(i)
            rows_next.append(j)

    test_ids = []
    if rich_test_set:
        for z in z_values:
            for s in range(n_states - 1):
                test_ids.append(tuple_id(s, 0, z))
            for s in range(1, n_states - 1):
                test_ids.append(tuple_id(s, 1, z))
    else:
        for z in (z_values[0], z_values[-1]):
            for s in range(min(3, n_states - 1)):
                test_ids.append(tuple_id(s, 0, z))
        for s in range(1, min(3, n_states - 1)):
            test_ids.append(tuple_id(s, 1, z_values[0]))  # never-updated pairs
        for k in range(2):
            test_ids.append(tuple_id(n_states - 2, 1, 0.123 + 0.1 * k))  # fresh tuples

    n_tuples = len(registry)
    states_of = np.array([k[0] for k in registry])
    p = n_tuples + n_states
    q = np.linalg.qr(rng.standard_normal((p, p)))[0]
    feats = np.sqrt(1 - delta**2) * q[:, :n_tuples] + delta * q[:, n_tuples + states_of]
    eye = np.eye(n_tuples)
    return ChainTheoryInstance(
        model=lo.LinearFeatureModel(projection=feats),
        x_test=eye[test_ids],
        x_train=eye[rows_train],
        x_next=eye[rows_next],
        gamma=np.array(gammas),
        rewards=rng.standard_normal(len(rows_train)),
        label=f"N={n_states},gamma={gamma},nz={len(z_values)}",
    )


def _se_floor(ana_cov: np.ndarray) -> float:
    # exactly-determined test points have (numerically) zero variance; give
    # their comparisons a tiny absolute floor
    return 1e-9 * max(float(np.clip(np.diag(ana_cov), 0, None).max()), 1e-30)


def check_posterior_oracle(n_seeds: int = 100_000) -> list[CheckResult]:
    """Closed-form mean/covariance vs the exact sampled linear model."""
    import time

    out = []
    for n_states, zs, gamma, seed, mc_seed in ORACLE_INSTANCES:
        t0 = time.monotonic()
        inst = chain_theory_instance(n_states, zs, gamma, seed)
        blocks = inst.blocks()
        rep = po.stability_check(blocks[("train", "train")].theta, blocks[("next", "train")].theta, inst.gamma)
        ana = po.td_posterior(blocks, inst.gamma, inst.rewards)
        mc = lo.linear_oracle_solve(
            inst.model, inst.x_test, inst.x_train, inst.x_next, inst.gamma, inst.rewards, n_seeds, mc_seed
        )
        var = np.clip(np.diag(ana.cov), 0.0, None)
        floor = _se_floor(ana.cov)
        z_mean = np.abs(ana.mean - mc.mean) / (np.sqrt(var / n_seeds) + floor)
        se_cov = np.sqrt((np.outer(var, var) + ana.cov**2) / n_seeds) + floor
        z_cov = np.abs(ana.cov - mc.cov) / se_cov
        worst = max(z_mean.max(), z_cov.max())
        elapsed = time.monotonic() - t0
        out.append(
            CheckResult(
                name=f"posterior-oracle equivalence [{inst.label}]",
                passed=bool(rep.is_pd and worst <= 3.0 and elapsed <= 120.0),
                details=(
                    f"pd={rep.is_pd}, max |z| mean {z_mean.max():.2f}, cov {z_cov.max():.2f} (<= 3), "
                    f"{elapsed:.1f}s (<= 120s)"
                ),
                metrics={"z_mean": float(z_mean.max()), "z_cov": float(z_cov.max()), "seconds": elapsed},
            )
        )
    return out


def check_error_mean_identity(n_seeds: int = 10_000) -> list[CheckResult]:
    """Mean over seeds of half squared errors vs the converged-value variance."""
    out = []
    for n_states, zs, gamma, seed, mc_seed in ORACLE_INSTANCES:
        inst = chain_theory_instance(n_states, zs, gamma, seed)
        ana = po.td_posterior(inst.blocks(), inst.gamma, inst.rewards)
        mc = lo.linear_oracle_solve(
            inst.model, inst.x_test, inst.x_train, inst.x_next, inst.gamma, inst.rewards,
            n_seeds, mc_seed + 1, n_heads=1,
        )
        var = np.clip(np.diag(ana.cov), 0.0, None)
        floor = _se_floor(ana.cov)
        # half eps^2 per point is var * chi2(1): standard error var * sqrt(2/n)
        se = var * np.sqrt(2.0 / n_seeds) + floor
        z = np.abs(mc.half_sq_errors.mean(axis=0) - var) / se
        out.append(
            CheckResult(
                name=f"error-mean identity [{inst.label}]",
                passed=bool(z.max() <= 3.0),
                details=f"max |z| {z.max():.2f} over {var.size} test points (<= 3)",
                metrics={"z_max": float(z.max())},
            )
        )
    return out


def check_error_distribution_law(n_seeds: int = 2000, heads=(1, 4, 16), alpha: float = 0.01) -> list[CheckResult]:
    """KS test of M-head mean errors against the scaled chi-squared law,
    plus a power check with a deliberately mislabeled law."""
    n_states, zs, gamma, seed, mc_seed = ORACLE_INSTANCES[0]
    inst = chain_theory_instance(n_states, zs, gamma, seed)
    ana = po.td_posterior(inst.blocks(), inst.gamma, inst.rewards)
    law = po.uvu_error_law(ana)
    var = law.sigma_q2
    point = int(np.argmax(var))  # a genuinely uncertain test point
    out = []
    for m in heads:
        mc = lo.linear_oracle_solve(
            inst.model, inst.x_test, inst.x_train, inst.x_next, inst.gamma, inst.rewards,
            n_seeds, mc_seed + 3000 + 37 * m, n_heads=m,
        )
        samples = mc.half_sq_errors[:, point]
        dist = law.head_mean_distribution(point, m)
        res = stats.kstest(samples, dist.cdf)
        out.append(
            CheckResult(
                name=f"error-law chi-squared fit (M={m})",
                passed=bool(res.pvalue > alpha),
                details=f"KS stat {res.statistic:.4f}, p {res.pvalue:.4f} (> {alpha})",
                metrics={"p_value": float(res.pvalue)},
            )
        )
    # power: chi2(M+5) samples labeled as chi2(M) must be rejected
    m = 4
    rng = np.random.default_rng(12345)
    s2 = float(var[point])
    bad = stats.chi2(df=m + 5, scale=s2 / m).rvs(size=n_seeds, random_state=rng)
    res = stats.kstest(bad, stats.chi2(df=m, scale=s2 / m).cdf)
    out.append(
        CheckResult(
            name="error-law mislabeled power check",
            passed=bool(res.pvalue < alpha),
            details=f"KS p {res.pvalue:.2e} (< {alpha} as required)",
            metrics={"p_value": float(res.pvalue)},
        )
    )
    return out


def check_gamma0_reduction(n_instances: int = 20) -> list[CheckResult]:
    """At discount zero the TD posterior must equal the independently
    implemented regression posterior entrywise."""
    worst_cov, worst_mean = 0.0, 0.0
    rng = np.random.default_rng(2024)
    done = 0
    while done < n_instances:
        d = int(rng.integers(8, 17))
        n_d = int(rng.integers(4, d))  # keep the training Gram well conditioned
        n_t = int(rng.integers(2, 7))
        xs = rng.standard_normal((n_d + n_d + n_t, d))
        xs /= np.linalg.norm(xs, axis=1, keepdims=True)
        spec = MlpSpec(input_dim=d, hidden_widths=(1,) * int(rng.integers(0, 2)), sigma_b=0.3)
        blocks = kernels.kernel_blocks(
            spec, {"test": xs[:n_t], "train": xs[n_t : n_t + n_d], "next": xs[n_t + n_d :]}
        )
        if np.linalg.cond(blocks[("train", "train")].theta) > 1e6:
            continue
        rewards = rng.standard_normal(n_d)
        td = po.td_posterior(blocks, 0.0, rewards)
        sup = po.supervised_posterior(blocks, rewards)
        worst_cov = max(worst_cov, float(np.abs(td.cov - sup.cov).max()))
        worst_mean = max(worst_mean, float(np.abs(td.mean - sup.mean).max()))
        done += 1
    return [
        CheckResult(
            name="gamma-zero posterior reduction",
            passed=worst_cov < 1e-12 and worst_mean < 1e-12,
            details=f"max |cov diff| {worst_cov:.2e}, |mean diff| {worst_mean:.2e} (< 1e-12)",
            metrics={"cov_diff": worst_cov, "mean_diff": worst_mean},
        )
    ]


def check_trainer_reduction() -> list[CheckResult]:
    """At discount zero the TD uncertainty trainer and the plain distillation
    trainer must produce bitwise-identical parameter trajectories."""
    mdp = envs.make_chain(5, 0.7, divergence_state="all")
    ds = envs.rollout_chain(mdp, envs.ChainPolicy(1.0), 1, seed=0)
    x = envs.encode_chain_inputs(mdp, ds.states[:, 0], ds.actions, np.full(len(ds), 0.5))
    xp = envs.encode_chain_inputs(mdp, ds.next_states[:, 0], ds.next_actions, np.full(len(ds), 0.5))
    spec = MlpSpec(input_dim=x.shape[1], hidden_widths=(16,), n_heads=4, sigma_b=0.2)
    cfg = train.TrainConfig(learning_rate=0.02, batch_size=3, n_steps=80, optimizer="adam", adam_eps=1e-8, seed=11)
    model = train.init_uvu_model(spec, 0.0, seed=5)
    train.uvu_train(model, x, xp, 0.0, cfg)
    rnd = train.RndModel(
        spec,
        predictor=net.ParamVector(net.init_params(spec, np.random.SeedSequence(5).spawn(2)[0]), role="rnd_predictor"),
        target=net.ParamVector(model.target.values.copy(), role="rnd_target"),
    )
    train.rnd_train(rnd, x, cfg)
    equal = bool(np.array_equal(model.online.values, rnd.predictor.values))
    return [
        CheckResult(
            name="gamma-zero trainer trajectory equality",
            passed=equal,
            details="bitwise-identical parameters" if equal else "trajectories differ",
        )
    ]


def check_block_affine(n_seeds_unused: int = 0) -> list[CheckResult]:
    """The joint affine-map covariance's test block must reproduce the
    direct closed form on every oracle instance."""
    out = []
    for n_states, zs, gamma, seed, _ in ORACLE_INSTANCES:
        inst = chain_theory_instance(n_states, zs, gamma, seed)
        blocks = inst.blocks()
        direct = po.td_posterior(blocks, inst.gamma, inst.rewards)
        joint = po.block_affine_posterior(blocks, inst.gamma, inst.rewards).test_block()
        dc = float(np.abs(direct.cov - joint.cov).max())
        dm = float(np.abs(direct.mean - joint.mean).max())
        out.append(
            CheckResult(
                name=f"block-map redundancy [{inst.label}]",
                passed=dc < 1e-10 and dm < 1e-10,
                details=f"max |cov diff| {dc:.2e}, |mean diff| {dm:.2e} (< 1e-10)",
                metrics={"cov_diff": dc},
            )
        )
    return out


# ---------------------------------------------------------------------------
# Kernel recursion and gradient checks
# ---------------------------------------------------------------------------


def check_kernel_recursion(width: int = 4096, depths=(1, 2, 3), n_points: int = 10, n_init: int = 8, tol: float = 0.05) -> list[CheckResult]:
    """Finite-width empirical kernels vs the closed-form recursions."""
    out = []
    rng = np.random.default_rng(314)
    xs = kernels.unit_sphere(rng.standard_normal((n_points, 8)))
    for depth in depths:
        spec = MlpSpec(input_dim=8, hidden_widths=(width,) * depth, n_heads=1, nonlinearity="relu", sigma_b=0.2)
        ana = kernels.ntk_kernel(spec, xs)
        emp_theta = np.zeros((n_points, n_points))
        emp_kappa = np.zeros((n_points, n_points))
        for k in range(n_init):
            params = net.init_params(spec, 1000 + 17 * k + depth)
            emp_theta += net.empirical_ntk(spec, params, xs)
            _, (hs, _) = net.forward_with_cache(spec, params, xs)
            emp_kappa += spec.sigma_b**2 + spec.sigma_w**2 * (hs[-1] @ hs[-1].T) / hs[-1].shape[1]
        emp_theta /= n_init
        emp_kappa /= n_init
        rel_t = float(np.abs((emp_theta - ana.theta) / ana.theta).max())
        rel_k = float(np.abs((emp_kappa - ana.kappa) / ana.kappa).max())
        out.append(
            CheckResult(
                name=f"kernel recursion at width {width} (L={depth})",
                passed=rel_t <= tol and rel_k <= tol,
                details=f"max rel err theta {rel_t:.3f}, kappa {rel_k:.3f} (<= {tol})",
                metrics={"rel_theta": rel_t, "rel_kappa": rel_k},
            )
        )
    # Monte Carlo check of the closed-form pair expectations
    worst = 0.0
    for i, (nl, k11, k12, k22) in enumerate(
        [("relu", 1.3, 0.4, 0.9), ("relu", 0.8, -0.3, 1.1), ("erf", 1.3, 0.4, 0.9)]
    ):
        e_mc, ed_mc = kernels.pair_expectation_mc(nl, k11, k12, k22, 2 * 10**6, 700 + i)
        e = float(kernels.pair_expectation(nl, k11, k12, k22))
        ed = float(kernels.pair_derivative_expectation(nl, k11, k12, k22))
        worst = max(worst, abs(e_mc - e) / abs(e), abs(ed_mc - ed) / abs(ed))
    out.append(
        CheckResult(
            name="kernel pair-expectation Monte Carlo",
            passed=worst <= 0.005,
            details=f"max rel err {worst:.4f} (<= 0.005)",
            metrics={"rel_err": worst},
        )
    )
    return out


def _fd_check(fwd, grad_vec, params, idx, h=1e-5):
    worst = 0.0
    for i in idx:
        pp = params.copy()
        pp[i] += h
        pm = params.copy()
        pm[i] -= h
        fd = (fwd(pp) - fwd(pm)) / (2 * h)
        denom = max(abs(fd), abs(grad_vec[i]))
        if denom > 1e-10:
            worst = max(worst, abs(fd - grad_vec[i]) / denom)
    return worst


def check_gradients(n_coords: int = 100) -> list[CheckResult]:
    """Analytic backprop vs central finite differences, both architectures."""
    rng = np.random.default_rng(99)
    out = []

    spec = MlpSpec(input_dim=7, hidden_widths=(24, 24), n_heads=3, nonlinearity="relu", sigma_b=0.4)
    params = net.init_params(spec, 1)
    x = rng.standard_normal(7)
    g = net.grad(spec, params, x, head=2)
    idx = rng.choice(params.size, size=n_coords, replace=False)
    worst = _fd_check(lambda p: float(net.forward(spec, p, x)[2]), g, params, idx)
    out.append(
        CheckResult(
            name="gradient check (plain multi-head net)",
            passed=worst < 1e-4,
            details=f"max rel err {worst:.2e} over {n_coords} coords (< 1e-4)",
            metrics={"rel_err": worst},
        )
    )

    arch = net.PracticalArchSpec(state_dim=9, task_dim=4, embed_width=14, trunk_widths=(12, 12), n_actions=3, n_heads=2)
    aparams = net.init_practical_params(arch, 2)
    s = rng.standard_normal(9)
    z = rng.standard_normal(4)
    ag = net.practical_grad(arch, aparams, s, z, action=1, head=1)
    idx = rng.choice(aparams.size, size=n_coords, replace=False)
    worst = _fd_check(lambda p: float(net.practical_forward(arch, p, s, z)[0, 1, 1]), ag, aparams, idx)
    out.append(
        CheckResult(
            name="gradient check (task-conditioned architecture)",
            passed=worst < 1e-4,
            details=f"max rel err {worst:.2e} over {n_coords} coords (< 1e-4)",
            metrics={"rel_err": worst},
        )
    )
    return out


def check_stability(n_instances: int = 100) -> list[CheckResult]:
    """Gershgorin bound vs exact eigenvalues, and the paired divergence demo."""
    rng = np.random.default_rng(404)
    ok = True
    margin = np.inf
    for _ in range(n_instances):
        n = int(rng.integers(2, 10))
        a = rng.standard_normal((n, n)) * rng.uniform(0.2, 2.0)
        rep = po.stability_check(a, np.zeros_like(a), 0.0)
        min_real = float(np.min(np.linalg.eigvals(a).real))
        ok &= rep.gershgorin_lower_bound <= min_real + 1e-12
        margin = min(margin, min_real - rep.gershgorin_lower_bound)
    results = [
        CheckResult(
            name="gershgorin lower-bounds eigenvalues",
            passed=bool(ok),
            details=f"holds on {n_instances} random instances (min slack {margin:.3f})",
        )
    ]

    # textbook unstable problem: one transition onto a doubled feature
    feats = lo.LinearFeatureModel(projection=np.array([[1.0]]))
    x_tr = np.array([[1.0]])
    x_nx = np.array([[2.0]])
    blocks = feats.kernel_blocks({"test": x_tr, "train": x_tr, "next": x_nx})
    rep = po.stability_check(blocks[("train", "train")].theta, blocks[("next", "train")].theta, 0.9)
    diverged = False
    try:
        spec = MlpSpec(input_dim=1, hidden_widths=())
        params = net.init_params(spec, 0)
        cfg = train.TrainConfig(learning_rate=0.5, batch_size=None, n_steps=2000, optimizer="sgd", divergence_threshold=1e6)
        for _ in range(cfg.n_steps):
            train.td_step(spec, params, x_tr, x_nx, np.array([1.0]), 0.9, params, cfg)
    except train.DivergenceError:
        diverged = True
    results.append(
        CheckResult(
            name="non-pd verdict pairs with training blowup",
            passed=bool((not rep.is_pd) and diverged),
            details=f"pd verdict {rep.is_pd} (expected False), divergence abort {diverged} (expected True)",
        )
    )
    return results


# ---------------------------------------------------------------------------
# Tabular reproduction
# ---------------------------------------------------------------------------


def check_tabular_recovery() -> list[CheckResult]:
    """Full-coverage recovery and truncated-coverage error persistence."""
    mdp = envs.make_chain(4, 0.7)
    policy = envs.ChainPolicy(z=1.0)
    ds = envs.rollout_chain(mdp, policy, 1, seed=0)
    heads = tabular.init_tabular(mdp, 0, 4)
    for h in heads:
        tabular.tabular_sweep(h, mdp, ds, policy, 50)
    visited = [(s, 0) for s in range(mdp.n_states - 1)]
    gap = max(abs(h.u[s, a] - h.g[s, a]) for h in heads for (s, a) in visited)

    heads0 = tabular.init_tabular(mdp, 0, 4)
    z0 = envs.ChainPolicy(z=0.0)
    for h in heads0:
        tabular.tabular_sweep(h, mdp, ds, z0, 50)
    g_var = float(np.var(np.stack([h.g for h in heads0]), ddof=1))
    mean_errs = [float(np.mean([tabular.tabular_error(h, s, 0) for h in heads0])) for s in (0, 1)]
    threshold = 0.01 * g_var
    return [
        CheckResult(
            name="tabular full-coverage recovery",
            passed=gap < 1e-8,
            details=f"max |u - g| on visited pairs {gap:.2e} (< 1e-8)",
            metrics={"gap": float(gap)},
        ),
        CheckResult(
            name="tabular truncated-coverage errors",
            passed=all(e > threshold for e in mean_errs),
            details=f"mean errors at s1, s2: {mean_errs[0]:.3f}, {mean_errs[1]:.3f} (> {threshold:.4f})",
            metrics={"errors": mean_errs, "threshold": threshold},
        ),
    ]


def check_chain_heatmap_ordering(n_heads: int = 1024, n_members: int = 256, seed: int = 5) -> list[CheckResult]:
    """Ordering properties of the uncertainty heatmaps over the policy grid."""
    from . import evaluation as ev

    mdp = envs.make_chain(6, 0.9, divergence_state="all")
    ds = envs.rollout_chain(mdp, envs.ChainPolicy(1.0), 1, seed=1)
    z_grid = np.array([0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    out = []
    maps = {}
    for est in ("tabular_uvu", "tabular_ensemble"):
        hm = ev.chain_heatmap(est, mdp, ds, z_grid, seed=seed, n_heads=n_heads, n_members=n_members)
        maps[est] = hm
        v0 = hm.column(0.0)
        v1 = hm.column(1.0)
        ratio_ok = bool(np.all(v1 <= 0.1 * np.maximum(v0, 1e-30)))
        rhos = []
        for row in range(hm.values.shape[0] - 1):  # terminal-adjacent row is all ~0
            rho, _ = stats.spearmanr(z_grid, hm.values[row])
            rhos.append(rho)
        z_monotone = bool(max(rhos) < -0.9)
        small_z = hm.values[:, 1]  # z = 0.2
        rho_state, _ = stats.spearmanr(np.arange(small_z.size), small_z)
        toward_term = bool(small_z[-1] < 0.5 * small_z[0] and rho_state < -0.6)
        out.append(
            CheckResult(
                name=f"heatmap ordering ({est})",
                passed=ratio_ok and z_monotone and toward_term,
                details=(
                    f"z=1 <= 0.1 x z=0: {ratio_ok}; max z-Spearman {max(rhos):.3f} (< -0.9); "
                    f"state-Spearman at z=0.2: {rho_state:.3f}, terminal drop {small_z[-1]:.4f} < 0.5*{small_z[0]:.4f}"
                ),
            )
        )

    # myopic baseline: trained on all grid z values, so its error is flat in z
    spec = MlpSpec(input_dim=envs.chain_input_dim(mdp), hidden_widths=(64,), n_heads=64, sigma_b=0.1)
    cfg = train.TrainConfig(learning_rate=0.25, batch_size=None, n_steps=4000, optimizer="sgd", seed=seed, convergence_tol=0.0)
    rnd_hm = ev.chain_heatmap("rnd", mdp, ds, z_grid, seed=seed, spec=spec, config=cfg)
    scale = float(maps["tabular_uvu"].values.max())
    spread = float((rnd_hm.values.max(axis=1) - rnd_hm.values.min(axis=1)).max())
    flat = bool(spread <= 0.02 * scale)
    out.append(
        CheckResult(
            name="heatmap ordering (myopic baseline flat in z)",
            passed=flat,
            details=f"max z-spread {spread:.2e} <= 2% of uncertainty scale {scale:.3f}",
            metrics={"spread": spread, "scale": scale},
        )
    )
    return out


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def run_suite(name: str) -> list[CheckResult]:
    suites = {
        "kernels": lambda: check_kernel_recursion() + check_gradients(),
        "theorem1": lambda: check_posterior_oracle() + check_block_affine() + check_stability(),
        "corollaries": lambda: check_error_mean_identity() + check_error_distribution_law(),
        "reductions": lambda: check_gamma0_reduction() + check_trainer_reduction(),
        "tabular": lambda: check_tabular_recovery() + check_chain_heatmap_ordering(),
    }
    if name == "all":
        results = []
        for key in suites:
            results.extend(suites[key]())
        return results
    if name not in suites:
        raise ValueError(f"unknown suite {name!r}; pick from {sorted(suites)} or 'all'")
    return suites[name]()
