"""Experiment drivers and statistics: chain heatmaps, the task-rejection
protocol, distribution tests, and uncertainty-quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import tabular, train
from .envs import GridWorld, N_DOOR_COLORS, ChainMdp, Dataset
from .net import MlpSpec

CHAIN_ESTIMATORS = (
    "uvu",
    "ensemble_variance",
    "rnd",
    "rnd_prior",
    "tabular_uvu",
    "tabular_ensemble",
)


@dataclass
class HeatmapGrid:
    """Uncertainty at (state, forward action) over a policy-parameter grid."""

    z_values: np.ndarray
    states: np.ndarray  # 0-based pre-terminal state indices
    values: np.ndarray  # (n_states, n_z), nonnegative

    def __post_init__(self):
        if self.values.shape != (self.states.size, self.z_values.size):
            raise ValueError("heatmap dimensions inconsistent")

    def column(self, z: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.z_values - z)))
        return self.values[:, j]


def chain_heatmap(
    estimator: str,
    mdp: ChainMdp,
    dataset: Dataset,
    z_grid,
    *,
    seed=0,
    n_heads: int = 128,
    n_members: int = 128,
    spec: MlpSpec | None = None,
    config: train.TrainConfig | None = None,
) -> HeatmapGrid:
    """Evaluate one uncertainty estimator at the forward action over a z grid."""
    if estimator not in CHAIN_ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; pick one of {CHAIN_ESTIMATORS}")
    z_values = np.asarray(list(z_grid), dtype=float)
    states = np.arange(mdp.n_states - 1)
    if estimator == "tabular_uvu":
        values = 0.5 * tabular.tabular_uvu_z_profile(mdp, dataset, z_values, n_heads, seed)
    elif estimator == "tabular_ensemble":
        values = tabular.tabular_ensemble_z_profile(mdp, dataset, z_values, n_members, seed)
    else:
        from .envs import chain_input_dim

        if spec is None:
            spec = MlpSpec(input_dim=chain_input_dim(mdp), hidden_widths=(64,), n_heads=n_heads, sigma_b=0.1)
        if config is None:
            config = train.TrainConfig(
                learning_rate=0.2, batch_size=None, n_steps=3000, optimizer="sgd", seed=seed, convergence_tol=0.0
            )
        if estimator == "uvu":
            values = train.chain_uvu_heatmap(mdp, dataset, z_values, spec, config, seed)
        elif estimator == "ensemble_variance":
            values = train.chain_ensemble_heatmap(mdp, dataset, z_values, spec, config, n_members, seed)
        elif estimator == "rnd":
            values = train.chain_rnd_heatmap(mdp, dataset, z_values, spec, config, seed)
        else:
            values = train.chain_rnd_prior_heatmap(mdp, dataset, z_values, spec, config, seed)
    return HeatmapGrid(z_values=z_values, states=states, values=np.maximum(values, 0.0))


# ---------------------------------------------------------------------------
# Task rejection protocol
# ---------------------------------------------------------------------------


@dataclass
class RunSummary:
    """Values with their mean and a Student-t confidence half-width."""

    values: np.ndarray
    mean: float
    half_width: float
    confidence: float = 0.9

    @property
    def interval(self) -> tuple[float, float]:
        return (self.mean - self.half_width, self.mean + self.half_width)


def summarize_returns(values, confidence: float = 0.9) -> RunSummary:
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    if values.size < 2:
        return RunSummary(values, mean, float("nan"), confidence)
    sem = values.std(ddof=1) / np.sqrt(values.size)
    tcrit = stats.t.ppf(0.5 + confidence / 2, df=values.size - 1)
    return RunSummary(values, mean, float(tcrit * sem), confidence)


def reject_tasks(uncertainties: np.ndarray, n_reject: int) -> np.ndarray:
    """Indices of the tasks to reject: highest uncertainty, ties by index."""
    order = np.lexsort((np.arange(uncertainties.size), -uncertainties))
    return np.sort(order[:n_reject])


def run_task_rejection(
    agent,
    uncertainty_fn,
    env: GridWorld,
    n_episodes: int,
    seed,
    n_tasks: int = N_DOOR_COLORS,
    n_reject: int = 4,
) -> RunSummary:
    """Per episode: offer every task, reject the most uncertain, attempt one
    uniformly drawn survivor under the agent's greedy policy.

    ``uncertainty_fn(obs, action, task_one_hot) -> float`` scores tasks at the
    initial state with the agent's greedy initial action; pass None for the
    random-rejection baseline.  Returns the per-episode returns of one seed.
    """
    rng = np.random.default_rng(seed)
    returns = []
    for _ in range(n_episodes):
        obs = env.reset()
        if uncertainty_fn is None:
            rejected = rng.choice(n_tasks, size=n_reject, replace=False)
        else:
            unc = np.empty(n_tasks)
            for color in range(n_tasks):
                z = np.zeros(n_tasks)
                z[color] = 1.0
                a0 = agent.greedy_action(obs, z)
                unc[color] = uncertainty_fn(obs, a0, z)
            rejected = reject_tasks(unc, n_reject)
        survivors = np.setdiff1d(np.arange(n_tasks), rejected)
        task = int(survivors[rng.integers(survivors.size)])
        env.set_task(task)
        z = env.task_one_hot()
        total = 0.0
        done = False
        while not done:
            a = agent.greedy_action(obs, z)
            obs, r, done = env.step(a)
            total += r
        returns.append(total)
    return summarize_returns(np.asarray(returns))


def oracle_uncertainty(env: GridWorld):
    """Ground-truth scorer built from the data-collection mixture rule:
    flags tasks whose door is absent or sits on the north/east walls."""

    def fn(obs, action, z):
        color = int(np.argmax(z))
        wall = env.layout.color_wall.get(color)
        return 1.0 if wall in (None, "north", "east") else 0.0

    return fn


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


@dataclass
class KsResult:
    statistic: float
    p_value: float
    passed: bool


def ks_test(samples, law, alpha: float = 0.01) -> KsResult:
    """Two-sided Kolmogorov-Smirnov test of samples against a frozen law.

    ``law`` is any object with a ``cdf`` method, or the string "degenerate"
    for the all-mass-at-zero case.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < 100:
        raise ValueError("need at least 100 samples")
    if isinstance(law, str) and law == "degenerate":
        ok = bool(np.all(np.abs(samples) < 1e-12))
        return KsResult(statistic=0.0 if ok else 1.0, p_value=1.0 if ok else 0.0, passed=ok)
    res = stats.kstest(samples, law.cdf)
    return KsResult(statistic=float(res.statistic), p_value=float(res.pvalue), passed=bool(res.pvalue > alpha))


def uncertainty_correlation(uvu_errors, ensemble_variances) -> float:
    """Spearman rank correlation between paired uncertainty evaluations."""
    a = np.asarray(uvu_errors, dtype=float)
    b = np.asarray(ensemble_variances, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired evaluations must have equal shape")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ValueError("rank correlation undefined for constant inputs")
    rho, _ = stats.spearmanr(a, b)
    return float(rho)


def one_sided_t_test(higher, lower) -> float:
    """p-value for mean(higher) > mean(lower), Welch one-sided."""
    res = stats.ttest_ind(higher, lower, equal_var=False, alternative="greater")
    return float(res.pvalue)


def two_sided_t_test(a, b) -> float:
    res = stats.ttest_ind(a, b, equal_var=False)
    return float(res.pvalue)


# ---------------------------------------------------------------------------
# Desk-scale offline rejection experiment
# ---------------------------------------------------------------------------


def desk_scale_rejection_experiment(
    n_seeds: int = 5,
    grid_size: int = 5,
    layout_pool: int = 6,
    collect_steps: int = 20_000,
    train_steps: int = 10_000,
    n_heads: int = 32,
    ensemble_size: int = 5,
    n_episodes: int = 50,
    base_seed: int = 100,
) -> dict:
    """Offline task rejection at desk scale: single-model uncertainty vs a
    value ensemble vs random rejection.

    Per seed: collect a mixture-policy replay with a concurrently training
    online agent, train the three offline learners at the same gradient-step
    budget, then score the rejection protocol.  Returns per-seed means,
    summed training wall-clock for the single-model and ensemble runs, and
    the comparison p-values.
    """
    from . import envs as _envs
    from . import net as _net

    arch = _net.PracticalArchSpec(
        state_dim=GridWorld.OBS_DIM,
        task_dim=N_DOOR_COLORS,
        embed_width=64,
        trunk_widths=(64, 64, 64),
        n_actions=4,
        n_heads=1,
    )
    returns = {"random": [], "uvu": [], "ensemble": []}
    wall = {"uvu": 0.0, "ensemble": 0.0}
    for k in range(n_seeds):
        env = _envs.make_gridworld(grid_size, seed=base_seed + k, layout_pool=layout_pool)
        collect_cfg = train.TrainConfig(
            learning_rate=1e-3, batch_size=128, n_steps=collect_steps, discount=0.9,
            seed=k, use_float32=True,
        )
        agent = train.OnlineDqnAgent(arch, collect_cfg, seed=1000 + k, warmup=500)
        dataset = _envs.collect_gridworld_dataset(env, agent, n_steps=collect_steps, seed=200 + k)

        offline_cfg = train.TrainConfig(
            learning_rate=1e-3, batch_size=128, n_steps=train_steps, discount=0.9,
            seed=300 + k, use_float32=True,
        )
        dqn = train.dqn_offline_train(dataset, arch, offline_cfg)
        uvu, t_uvu = train.timed(train.uvu_offline_train, dataset, arch, offline_cfg, n_heads)
        ens, t_ens = train.timed(train.bdqnp_offline_train, dataset, arch, offline_cfg, ensemble_size, 1.0)
        wall["uvu"] += t_uvu
        wall["ensemble"] += t_ens

        for name, model, unc in (
            ("random", dqn, None),
            ("uvu", uvu, uvu.uncertainty),
            ("ensemble", ens, ens.uncertainty),
        ):
            eval_env = _envs.make_gridworld(grid_size, seed=base_seed + k, layout_pool=layout_pool)
            summary = run_task_rejection(model, unc, eval_env, n_episodes, seed=400 + k)
            returns[name].append(summary.mean)

    return {
        "returns": returns,
        "wall_seconds": wall,
        "wall_ratio": wall["uvu"] / wall["ensemble"],
        "p_beats_random": one_sided_t_test(returns["uvu"], returns["random"]),
        "p_vs_ensemble": two_sided_t_test(returns["uvu"], returns["ensemble"]),
    }
