"""Training procedures: semi-gradient TD, synthetic-reward uncertainty
training, ensembles, distillation baselines, and offline DQN.

Two pipelines are kept deliberately distinct:

* Theory mode operates on plain multi-head MLPs over pre-encoded inputs with
  full-batch (or minibatch) semi-gradient steps and fixed next actions, the
  regime the closed-form posterior describes.
* Practical mode operates on the task-conditioned architecture with Adam,
  minibatches, target networks in place of the stop-gradient, double-Q
  action selection, and greedy next actions recomputed every step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import net
from .envs import Dataset
from .net import MlpSpec, ParamVector, PracticalArchSpec


class DivergenceError(RuntimeError):
    """Training loss blew up; typically a non-positive-definite TD operator.

    Run the stability diagnostic on the training transitions to confirm
    (``uvu_lab.posterior.stability_check``).
    """

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(
            f"training diverged at step {step} (loss {loss:.3e}); "
            "check the TD operator's positive definiteness via the "
            "stability diagnostic"
        )


@dataclass
class TrainConfig:
    learning_rate: float = 3e-4
    batch_size: int | None = 512  # None trains full-batch
    n_steps: int = 10_000
    discount: float = 0.9
    target_update_interval: int = 256
    target_polyak: float = 1.0
    seed: int = 0
    convergence_tol: float = 1e-8
    optimizer: str = "adam"  # "adam" | "sgd"
    adam_eps: float | None = None  # default 0.005 / batch_size
    divergence_threshold: float = 1e6
    use_float32: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def dtype(self):
        return np.float32 if self.use_float32 else np.float64

    def resolved_adam_eps(self) -> float:
        if self.adam_eps is not None:
            return self.adam_eps
        batch = self.batch_size or 1
        return 0.005 / batch


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params))


def apply_update(params: np.ndarray, grad: np.ndarray, config: TrainConfig, adam: AdamState | None):
    if config.optimizer == "sgd" or adam is None:
        params -= config.learning_rate * grad
        return
    adam.t += 1
    b1, b2 = 0.9, 0.999
    adam.m = b1 * adam.m + (1 - b1) * grad
    adam.v = b2 * adam.v + (1 - b2) * grad * grad
    m_hat = adam.m / (1 - b1**adam.t)
    v_hat = adam.v / (1 - b2**adam.t)
    params -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.resolved_adam_eps())


def _check_finite(loss: float, step: int, config: TrainConfig):
    if not np.isfinite(loss) or loss > config.divergence_threshold:
        raise DivergenceError(step, loss)


def _seed_seq(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


# ---------------------------------------------------------------------------
# Theory mode: semi-gradient TD on encoded inputs
# ---------------------------------------------------------------------------


def td_step(
    spec: MlpSpec,
    params: np.ndarray,
    x: np.ndarray,
    x_next: np.ndarray,
    rewards: np.ndarray,
    gamma,
    bootstrap_params: np.ndarray,
    config: TrainConfig,
    adam: AdamState | None = None,
) -> tuple[float, float]:
    """One semi-gradient step on 0.5 * mean ||g f(X') + r - f(X)||^2.

    Gradients flow only through f(X); the bootstrap term is evaluated with
    ``bootstrap_params`` (the parameters themselves for a pure stop-gradient
    step, or a lagged copy).  Returns (loss, max-abs residual).
    """
    gamma_vec = np.broadcast_to(np.asarray(gamma, dtype=params.dtype), (x.shape[0],))
    f_x, cache = net.forward_with_cache(spec, params, x)
    f_xp = net.forward(spec, bootstrap_params, x_next)
    rewards = np.asarray(rewards, dtype=params.dtype)
    if rewards.ndim == 1:
        rewards = rewards[:, None]
    resid = gamma_vec[:, None] * f_xp + rewards - f_x
    batch = x.shape[0]
    loss = float(0.5 * np.sum(resid**2) / batch)
    _check_finite(loss, adam.t if adam else -1, config)
    grad_flat = net.backprop(spec, params, cache, -resid / batch)
    apply_update(params, grad_flat, config, adam)
    return loss, float(np.abs(resid).max())


def regression_step(
    spec: MlpSpec,
    params: np.ndarray,
    x: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    adam: AdamState | None = None,
) -> tuple[float, float]:
    """One step of plain squared-error regression onto fixed targets."""
    f_x, cache = net.forward_with_cache(spec, params, x)
    targets = np.asarray(targets, dtype=params.dtype)
    if targets.ndim == 1:
        targets = targets[:, None]
    resid = targets - f_x
    batch = x.shape[0]
    loss = float(0.5 * np.sum(resid**2) / batch)
    _check_finite(loss, adam.t if adam else -1, config)
    grad_flat = net.backprop(spec, params, cache, -resid / batch)
    apply_update(params, grad_flat, config, adam)
    return loss, float(np.abs(resid).max())


@dataclass
class UvuModel:
    """Online learner and frozen random target of identical architecture."""

    spec: MlpSpec
    online: ParamVector
    target: ParamVector
    discount: float


def init_uvu_model(spec: MlpSpec, discount: float, seed) -> UvuModel:
    ss = _seed_seq(seed).spawn(2)
    return UvuModel(
        spec=spec,
        online=ParamVector(net.init_params(spec, ss[0]), role="vartheta"),
        target=ParamVector(net.init_params(spec, ss[1]), role="psi"),
        discount=discount,
    )


def uvu_synthetic_rewards(model: UvuModel, x: np.ndarray, x_next: np.ndarray, gamma) -> np.ndarray:
    """Per-head rewards g(x) - gamma g(x') generated by the frozen target."""
    gamma_vec = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (x.shape[0],))
    g_x = net.forward(model.spec, model.target.values, x)
    g_xp = net.forward(model.spec, model.target.values, x_next)
    return g_x - gamma_vec[:, None] * g_xp


def uvu_train(
    model: UvuModel,
    x: np.ndarray,
    x_next: np.ndarray,
    gamma,
    config: TrainConfig,
    xp_sampler=None,
    metrics=None,
) -> list[float]:
    """Train the online heads by semi-gradient TD on target-generated rewards.

    ``xp_sampler(rng) -> x_next`` optionally redraws next inputs (fresh next
    actions for a stochastic evaluated policy) every step; rewards are
    regenerated accordingly.  The frozen target is never touched.
    """
    rng = np.random.default_rng(config.seed)
    params = model.online.values
    adam = AdamState.like(params) if config.optimizer == "adam" else None
    losses = []
    rewards = uvu_synthetic_rewards(model, x, x_next, gamma)
    n = x.shape[0]
    for step in range(config.n_steps):
        if xp_sampler is not None:
            x_next = xp_sampler(rng)
            rewards = uvu_synthetic_rewards(model, x, x_next, gamma)
        if config.batch_size is None or config.batch_size >= n:
            bx, bxp, br = x, x_next, rewards
            bg = gamma
        else:
            idx = rng.integers(0, n, size=config.batch_size)
            bx, bxp, br = x[idx], x_next[idx], rewards[idx]
            bg = gamma if np.ndim(gamma) == 0 else np.asarray(gamma)[idx]
        loss, resid = td_step(model.spec, params, bx, bxp, br, bg, params, config, adam)
        losses.append(loss)
        if metrics is not None and step % 50 == 0:
            metrics.append((step, loss, resid))
        if resid < config.convergence_tol:
            break
    return losses


def uvu_error(model: UvuModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-head squared errors and their half mean at the query inputs."""
    u = net.forward(model.spec, model.online.values, x)
    g = net.forward(model.spec, model.target.values, x)
    eps_sq = (u - g) ** 2
    half_mean = 0.5 * eps_sq.mean(axis=-1)
    return eps_sq, half_mean


@dataclass
class RndModel:
    """Predictor regressing onto a frozen randomly initialized target."""

    spec: MlpSpec
    predictor: ParamVector
    target: ParamVector


def init_rnd_model(spec: MlpSpec, seed) -> RndModel:
    ss = _seed_seq(seed).spawn(2)
    return RndModel(
        spec=spec,
        predictor=ParamVector(net.init_params(spec, ss[0]), role="rnd_predictor"),
        target=ParamVector(net.init_params(spec, ss[1]), role="rnd_target"),
    )


def rnd_train(model: RndModel, x: np.ndarray, config: TrainConfig, metrics=None) -> list[float]:
    """Squared-error regression of the predictor onto the frozen target."""
    rng = np.random.default_rng(config.seed)
    params = model.predictor.values
    adam = AdamState.like(params) if config.optimizer == "adam" else None
    targets = net.forward(model.spec, model.target.values, x)
    losses = []
    n = x.shape[0]
    for step in range(config.n_steps):
        if config.batch_size is None or config.batch_size >= n:
            bx, bt = x, targets
        else:
            idx = rng.integers(0, n, size=config.batch_size)
            bx, bt = x[idx], targets[idx]
        loss, resid = regression_step(model.spec, params, bx, bt, config, adam)
        losses.append(loss)
        if metrics is not None and step % 50 == 0:
            metrics.append((step, loss, resid))
        if resid < config.convergence_tol:
            break
    return losses


def rnd_error(model: RndModel, x: np.ndarray) -> np.ndarray:
    """Half mean squared predictor/target gap at the query inputs."""
    u = net.forward(model.spec, model.predictor.values, x)
    g = net.forward(model.spec, model.target.values, x)
    return 0.5 * ((u - g) ** 2).mean(axis=-1)


@dataclass
class EnsembleModel:
    """Independently initialized members, optionally with frozen additive priors."""

    spec: MlpSpec
    members: list[ParamVector]
    priors: list[ParamVector] | None = None
    prior_scale: float = 0.0


def init_ensemble(spec: MlpSpec, n_members: int, seed, prior_scale: float = 0.0) -> EnsembleModel:
    if n_members < 1:
        raise ValueError("need at least one member")
    children = _seed_seq(seed).spawn(2 * n_members)
    members = [ParamVector(net.init_params(spec, children[2 * k]), role="theta") for k in range(n_members)]
    priors = None
    if prior_scale != 0.0:
        priors = [
            ParamVector(net.init_params(spec, children[2 * k + 1]), role="psi")
            for k in range(n_members)
        ]
    return EnsembleModel(spec=spec, members=members, priors=priors, prior_scale=prior_scale)


def ensemble_member_output(model: EnsembleModel, k: int, x: np.ndarray) -> np.ndarray:
    out = net.forward(model.spec, model.members[k].values, x)
    if model.priors is not None:
        out = out + model.prior_scale * net.forward(model.spec, model.priors[k].values, x)
    return out


def ensemble_outputs(model: EnsembleModel, x: np.ndarray) -> np.ndarray:
    """Stacked member outputs, shape (n_members, B, n_heads)."""
    return np.stack([ensemble_member_output(model, k, x) for k in range(len(model.members))])


def ensemble_train(
    model: EnsembleModel,
    x: np.ndarray,
    x_next: np.ndarray,
    rewards: np.ndarray,
    gamma,
    config: TrainConfig,
    xp_sampler=None,
) -> list[list[float]]:
    """Train every member by semi-gradient TD from its own initialization.

    With ``xp_sampler`` each member redraws its own next inputs per step
    (independent bootstrapping for stochastic evaluated policies); members
    never share parameters or random streams.
    """
    all_losses = []
    for k, member in enumerate(model.members):
        cfg = replace(config, seed=config.seed + 1000 * k + 17)
        rng = np.random.default_rng(cfg.seed)
        params = member.values
        adam = AdamState.like(params) if cfg.optimizer == "adam" else None
        losses = []
        xp = x_next
        n = x.shape[0]
        for _ in range(cfg.n_steps):
            if xp_sampler is not None:
                xp = xp_sampler(rng)
            if cfg.batch_size is None or cfg.batch_size >= n:
                bx, bxp, br, bg = x, xp, rewards, gamma
            else:
                idx = rng.integers(0, n, size=cfg.batch_size)
                bx, bxp, br = x[idx], xp[idx], rewards[idx]
                bg = gamma if np.ndim(gamma) == 0 else np.asarray(gamma)[idx]
            if model.priors is not None:
                # absorb the frozen prior into rewards/bootstrap: the trainable
                # part fits residual targets so that member = trainable + prior
                prior = model.priors[k].values
                p_x = net.forward(model.spec, prior, bx)
                p_xp = net.forward(model.spec, prior, bxp)
                gvec = np.broadcast_to(np.asarray(bg, dtype=np.float64), (bx.shape[0],))
                br = np.asarray(br, dtype=np.float64)
                br2 = (br[:, None] if br.ndim == 1 else br) + model.prior_scale * (
                    gvec[:, None] * p_xp - p_x
                )
            else:
                br2 = br
            loss, resid = td_step(model.spec, params, bx, bxp, br2, bg, params, cfg, adam)
            losses.append(loss)
            if resid < cfg.convergence_tol:
                break
        all_losses.append(losses)
    return all_losses


# ---------------------------------------------------------------------------
# Chain experiment drivers (function approximation over (s, a, z) encodings)
# ---------------------------------------------------------------------------


def _chain_product_inputs(mdp, dataset, z_values):
    """Dataset transitions replicated across the z grid, plus samplers."""
    from .envs import ChainPolicy, encode_chain_inputs

    s = dataset.states[:, 0].astype(int)
    a = dataset.actions.astype(int)
    sn = dataset.next_states[:, 0].astype(int)
    done = dataset.done
    rows_s, rows_a, rows_sn, rows_z, rows_gamma = [], [], [], [], []
    for z in z_values:
        rows_s.append(s)
        rows_a.append(a)
        rows_sn.append(sn)
        rows_z.append(np.full(s.shape, z))
        rows_gamma.append(np.where(done, 0.0, mdp.discount))
    s_all = np.concatenate(rows_s)
    a_all = np.concatenate(rows_a)
    sn_all = np.concatenate(rows_sn)
    z_all = np.concatenate(rows_z)
    gamma_vec = np.concatenate(rows_gamma)
    x = encode_chain_inputs(mdp, s_all, a_all, z_all)

    def xp_sampler(rng):
        an = np.empty_like(a_all)
        for i in range(an.size):
            an[i] = ChainPolicy(z=float(z_all[i])).sample(mdp, int(sn_all[i]), rng) if gamma_vec[i] > 0 else 0
        return encode_chain_inputs(mdp, sn_all, an, z_all)

    return x, xp_sampler, gamma_vec


def _chain_query_inputs(mdp, z_values):
    from .envs import encode_chain_inputs

    states = np.arange(mdp.n_states - 1)
    grid_s = np.repeat(states, len(z_values))
    grid_z = np.tile(np.asarray(z_values, dtype=float), states.size)
    x = encode_chain_inputs(mdp, grid_s, np.zeros_like(grid_s), grid_z)
    return x, states.size, len(z_values)


def chain_uvu_heatmap(mdp, dataset, z_values, spec: MlpSpec, config: TrainConfig, seed) -> np.ndarray:
    """Half mean squared error of one multi-head model over (state, z)."""
    model = init_uvu_model(spec, mdp.discount, seed)
    x, xp_sampler, gamma_vec = _chain_product_inputs(mdp, dataset, z_values)
    uvu_train(model, x, xp_sampler(np.random.default_rng(config.seed)), gamma_vec, config, xp_sampler=xp_sampler)
    xq, n_s, n_z = _chain_query_inputs(mdp, z_values)
    _, half = uvu_error(model, xq)
    return half.reshape(n_s, n_z)


def chain_ensemble_heatmap(mdp, dataset, z_values, spec: MlpSpec, config: TrainConfig, n_members: int, seed) -> np.ndarray:
    """Sample variance of independently trained value networks over (state, z)."""
    single = spec.single_head()
    model = init_ensemble(single, n_members, seed)
    x, xp_sampler, gamma_vec = _chain_product_inputs(mdp, dataset, z_values)
    rewards = np.zeros(x.shape[0])
    ensemble_train(model, x, xp_sampler(np.random.default_rng(config.seed)), rewards, gamma_vec, config, xp_sampler=xp_sampler)
    xq, n_s, n_z = _chain_query_inputs(mdp, z_values)
    outs = ensemble_outputs(model, xq)[:, :, 0]
    return outs.var(axis=0, ddof=1).reshape(n_s, n_z)


def chain_rnd_heatmap(mdp, dataset, z_values, spec: MlpSpec, config: TrainConfig, seed) -> np.ndarray:
    """Myopic distillation error over (state, z); trained on dataset inputs only."""
    model = init_rnd_model(spec, seed)
    x, _, _ = _chain_product_inputs(mdp, dataset, z_values)
    rnd_train(model, x, config)
    xq, n_s, n_z = _chain_query_inputs(mdp, z_values)
    return rnd_error(model, xq).reshape(n_s, n_z)


def chain_rnd_prior_heatmap(mdp, dataset, z_values, spec: MlpSpec, config: TrainConfig, seed, with_prior: bool = True) -> np.ndarray:
    """Value-propagated myopic errors via an intrinsic value network.

    The intrinsic network trains on intrinsic rewards (the distillation
    errors); with the prior mechanism the myopic error is added inside the
    forward pass, which keeps never-updated query actions optimistic.  The
    distillation pair uses a larger weight variance so off-data errors sit
    well above the intrinsic network's own generalization noise, and the
    intrinsic network uses small-output He initialization so its values are
    meaningful on the intrinsic-reward scale.
    """
    ss = _seed_seq(seed).spawn(2)
    rnd_spec = replace(spec, sigma_w=2.0)
    rnd = init_rnd_model(rnd_spec, ss[0])
    x, xp_sampler, gamma_vec = _chain_product_inputs(mdp, dataset, z_values)
    rnd_train(rnd, x, config)
    r_intr = rnd_error(rnd, x)

    q_spec = replace(spec.single_head(), parametrization="standard", init="he_uniform")
    params = net.init_params(q_spec, ss[1])
    adam = AdamState.like(params) if config.optimizer == "adam" else None
    rng = np.random.default_rng(config.seed)
    for _ in range(config.n_steps):
        xp = xp_sampler(rng)
        if with_prior:
            # forward rule adds the myopic error on both sides of the residual
            prior_x = rnd_error(rnd, x)
            prior_xp = rnd_error(rnd, xp)
            f_x, cache = net.forward_with_cache(q_spec, params, x)
            f_xp = net.forward(q_spec, params, xp)
            resid = gamma_vec[:, None] * (f_xp + prior_xp[:, None]) + r_intr[:, None] - (f_x + prior_x[:, None])
            loss = float(0.5 * np.sum(resid**2) / x.shape[0])
            _check_finite(loss, adam.t if adam else -1, config)
            grad_flat = net.backprop(q_spec, params, cache, -resid / x.shape[0])
            apply_update(params, grad_flat, config, adam)
        else:
            td_step(q_spec, params, x, xp, r_intr, gamma_vec, params, config, adam)
    xq, n_s, n_z = _chain_query_inputs(mdp, z_values)
    values = net.forward(q_spec, params, xq)[:, 0]
    if with_prior:
        values = values + rnd_error(rnd, xq)
    return values.reshape(n_s, n_z)


# ---------------------------------------------------------------------------
# Practical mode: offline DQN machinery on the task-conditioned architecture
# ---------------------------------------------------------------------------


@dataclass
class DqnLearner:
    """Action-value learner with a lagged target copy and Adam state."""

    arch: PracticalArchSpec
    config: TrainConfig
    params: np.ndarray
    target_params: np.ndarray
    adam: AdamState
    step: int = 0

    def q_values(self, s, z, params=None) -> np.ndarray:
        p = self.params if params is None else params
        return net.practical_forward(self.arch, p, s, z)[:, :, 0]

    def greedy_action(self, obs, z) -> int:
        q = self.q_values(np.atleast_2d(obs), np.atleast_2d(z))[0]
        return int(np.argmax(q))

    def maybe_update_target(self):
        if self.step % self.config.target_update_interval == 0:
            lam = self.config.target_polyak
            self.target_params = (1 - lam) * self.target_params + lam * self.params
            if lam == 1.0:
                self.target_params = self.params.copy()


def init_dqn(arch: PracticalArchSpec, config: TrainConfig, seed) -> DqnLearner:
    params = net.init_practical_params(arch, seed, dtype=config.dtype)
    return DqnLearner(
        arch=arch,
        config=config,
        params=params,
        target_params=params.copy(),
        adam=AdamState.like(params),
    )


def _gather(values: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return values[np.arange(values.shape[0]), actions]


def dqn_train_step(learner: DqnLearner, batch, bootstrap_values: np.ndarray | None = None) -> tuple[float, float]:
    """One double-Q step on the taken actions.

    ``batch`` is (s, a, r, z, s_next, done).  When ``bootstrap_values`` is
    given it replaces the double-Q bootstrap (used by the uncertainty-driven
    per-head action selection).  Returns (loss, max-abs residual).
    """
    s, a, r, z, sn, done = batch
    cfg = learner.config
    if bootstrap_values is None:
        q_next_online = learner.q_values(sn, z)
        a_star = np.argmax(q_next_online, axis=1)
        q_next_target = learner.q_values(sn, z, params=learner.target_params)
        bootstrap_values = _gather(q_next_target, a_star)
    not_done = 1.0 - done.astype(learner.params.dtype)
    target = cfg.discount * not_done * bootstrap_values + r
    out, cache = net.practical_forward_with_cache(learner.arch, learner.params, s, z)
    q_sa = _gather(out[:, :, 0], a)
    resid = target - q_sa
    batch_n = s.shape[0]
    loss = float(0.5 * np.sum(resid**2) / batch_n)
    _check_finite(loss, learner.step, cfg)
    dout = np.zeros_like(out)
    dout[np.arange(batch_n), a, 0] = -resid / batch_n
    grad = net.practical_backprop(learner.arch, learner.params, cache, dout)
    apply_update(learner.params, grad, cfg, learner.adam)
    learner.step += 1
    learner.maybe_update_target()
    return loss, float(np.abs(resid).max())


def _sample_batch(dataset: Dataset, rng, batch_size, dtype):
    n = len(dataset)
    idx = rng.integers(0, n, size=min(batch_size or n, n))
    return (
        dataset.states[idx].astype(dtype),
        dataset.actions[idx],
        dataset.rewards[idx].astype(dtype),
        dataset.tasks[idx].astype(dtype),
        dataset.next_states[idx].astype(dtype),
        dataset.done[idx],
    )


def dqn_offline_train(dataset: Dataset, arch: PracticalArchSpec, config: TrainConfig, metrics=None) -> DqnLearner:
    """Universal action-value training on a fixed replay dataset."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    learner = init_dqn(arch, config, _seed_seq(config.seed).spawn(1)[0])
    for step in range(config.n_steps):
        batch = _sample_batch(dataset, rng, config.batch_size, config.dtype)
        loss, resid = dqn_train_step(learner, batch)
        if metrics is not None and (step % 100 == 0 or step == config.n_steps - 1):
            metrics.append((step, loss, resid))
    return learner


@dataclass
class BdqnpModel:
    """Bootstrapped value ensemble with randomized additive priors."""

    members: list[DqnLearner]
    priors: list[np.ndarray]
    prior_scale: float
    arch: PracticalArchSpec

    def member_q(self, k: int, s, z, use_target=False, prior_values=None) -> np.ndarray:
        learner = self.members[k]
        p = learner.target_params if use_target else learner.params
        q = net.practical_forward(self.arch, p, s, z)[:, :, 0]
        if self.prior_scale != 0.0:
            if prior_values is None:
                prior_values = net.practical_forward(self.arch, self.priors[k], s, z)[:, :, 0]
            q = q + self.prior_scale * prior_values
        return q

    def member_prior(self, k: int, s, z) -> np.ndarray:
        return net.practical_forward(self.arch, self.priors[k], s, z)[:, :, 0]

    def mean_q(self, s, z) -> np.ndarray:
        return np.mean([self.member_q(k, s, z) for k in range(len(self.members))], axis=0)

    def greedy_action(self, obs, z) -> int:
        return int(np.argmax(self.mean_q(np.atleast_2d(obs), np.atleast_2d(z))[0]))

    def uncertainty(self, obs, a: int, z) -> float:
        qs = [self.member_q(k, np.atleast_2d(obs), np.atleast_2d(z))[0, a] for k in range(len(self.members))]
        return float(np.var(qs, ddof=1))


def bdqnp_offline_train(
    dataset: Dataset,
    arch: PracticalArchSpec,
    config: TrainConfig,
    n_members: int,
    prior_scale: float = 1.0,
    metrics=None,
) -> BdqnpModel:
    """Train ensemble members with member-wise greedy bootstrap actions."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seeds = _seed_seq(config.seed).spawn(2 * n_members)
    members = [init_dqn(arch, config, seeds[2 * k]) for k in range(n_members)]
    priors = [net.init_practical_params(arch, seeds[2 * k + 1], dtype=config.dtype) for k in range(n_members)]
    model = BdqnpModel(members=members, priors=priors, prior_scale=prior_scale, arch=arch)
    rng = np.random.default_rng(config.seed)
    for step in range(config.n_steps):
        batch = _sample_batch(dataset, rng, config.batch_size, config.dtype)
        s, a, r, z, sn, done = batch
        for k, learner in enumerate(members):
            prior_next = model.member_prior(k, sn, z) if prior_scale != 0.0 else None
            q_next = model.member_q(k, sn, z, prior_values=prior_next)
            a_star = np.argmax(q_next, axis=1)
            q_next_t = model.member_q(k, sn, z, use_target=True, prior_values=prior_next)
            boot = _gather(q_next_t, a_star)
            if prior_scale != 0.0:
                # the trainable part fits targets net of its own frozen prior
                p_out = net.practical_forward(arch, model.priors[k], s, z)[:, :, 0]
                p_sa = _gather(p_out, a)
                not_done = 1.0 - done.astype(np.float64)
                target = learner.config.discount * not_done * boot + r - prior_scale * p_sa
                out, cache = net.practical_forward_with_cache(arch, learner.params, s, z)
                q_sa = _gather(out[:, :, 0], a)
                resid = target - q_sa
                loss = float(0.5 * np.sum(resid**2) / s.shape[0])
                _check_finite(loss, learner.step, learner.config)
                dout = np.zeros_like(out)
                dout[np.arange(s.shape[0]), a, 0] = -resid / s.shape[0]
                grad = net.practical_backprop(arch, learner.params, cache, dout)
                apply_update(learner.params, grad, learner.config, learner.adam)
                learner.step += 1
                learner.maybe_update_target()
                if metrics is not None and k == 0 and step % 100 == 0:
                    metrics.append((step, loss, float(np.abs(resid).max())))
            else:
                loss, rnorm = dqn_train_step(learner, batch, bootstrap_values=boot)
                if metrics is not None and k == 0 and step % 100 == 0:
                    metrics.append((step, loss, rnorm))
    return model


@dataclass
class UvuPracticalModel:
    """Single value learner plus a multi-head online/target uncertainty pair."""

    q: DqnLearner
    u_arch: PracticalArchSpec
    u_params: np.ndarray
    u_target: np.ndarray
    g_params: np.ndarray
    u_adam: AdamState
    step: int = 0

    def errors(self, s, z, params=None) -> np.ndarray:
        """Signed per-head errors u - g, shape (B, A, M)."""
        p = self.u_params if params is None else params
        u = net.practical_forward(self.u_arch, p, s, z)
        g = net.practical_forward(self.u_arch, self.g_params, s, z)
        return u - g

    def greedy_action(self, obs, z) -> int:
        return self.q.greedy_action(obs, z)

    def uncertainty(self, obs, a: int, z) -> float:
        eps = self.errors(np.atleast_2d(obs), np.atleast_2d(z))[0, a]
        return float(0.5 * np.mean(eps**2))


def uvu_bootstrap_q(q_values: np.ndarray, errors: np.ndarray) -> np.ndarray:
    """Per-head perturbed values Q + eps_k, shape (B, A, M).

    Adding each head's signed error to the single value estimate yields M
    distinct estimates used for independent bootstrap action selection.
    """
    return q_values[:, :, None] + errors


def uvu_offline_train(
    dataset: Dataset,
    arch: PracticalArchSpec,
    config: TrainConfig,
    n_heads: int = 32,
    metrics=None,
) -> UvuPracticalModel:
    """Co-train the value learner and the uncertainty pair on a fixed dataset.

    The value learner bootstraps through per-head greedy actions from the
    perturbed estimates Q + eps_k (averaged over heads); each uncertainty
    head trains by TD on its own target-generated synthetic reward with the
    same per-head action, using a lagged online copy in place of the
    stop-gradient.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seeds = _seed_seq(config.seed).spawn(3)
    u_arch = replace(arch, n_heads=n_heads)
    q = init_dqn(arch, config, seeds[0])
    u_params = net.init_practical_params(u_arch, seeds[1], dtype=config.dtype)
    g_params = net.init_practical_params(u_arch, seeds[2], dtype=config.dtype)
    model = UvuPracticalModel(
        q=q,
        u_arch=u_arch,
        u_params=u_params,
        u_target=u_params.copy(),
        g_params=g_params,
        u_adam=AdamState.like(u_params),
    )
    rng = np.random.default_rng(config.seed)
    cfg = config
    for step in range(cfg.n_steps):
        s, a, r, z, sn, done = _sample_batch(dataset, rng, cfg.batch_size, cfg.dtype)
        batch_n = s.shape[0]
        rows = np.arange(batch_n)

        # per-head greedy next actions from perturbed value estimates
        q_next = q.q_values(sn, z)
        u_sn = net.practical_forward(u_arch, model.u_params, sn, z)
        g_sn = net.practical_forward(u_arch, model.g_params, sn, z)
        a_heads = np.argmax(uvu_bootstrap_q(q_next, u_sn - g_sn), axis=1)  # (B, M)

        # value learner: double-Q bootstrap averaged over head actions
        q_next_t = q.q_values(sn, z, params=q.target_params)
        boot = q_next_t[rows[:, None], a_heads].mean(axis=1)
        dqn_train_step(q, (s, a, r, z, sn, done), bootstrap_values=boot)

        # uncertainty heads: synthetic rewards from the frozen target
        g_s = net.practical_forward(u_arch, model.g_params, s, z)
        u_t_sn = net.practical_forward(u_arch, model.u_target, sn, z)
        g_sa = g_s[rows, a, :]  # (B, M)
        g_next = g_sn[rows[:, None], a_heads, np.arange(a_heads.shape[1])[None, :]]
        u_next = u_t_sn[rows[:, None], a_heads, np.arange(a_heads.shape[1])[None, :]]
        not_done = (1.0 - done.astype(cfg.dtype))[:, None]
        r_g = g_sa - cfg.discount * not_done * g_next
        target = cfg.discount * not_done * u_next + r_g

        u_out, cache = net.practical_forward_with_cache(u_arch, model.u_params, s, z)
        u_sa = u_out[rows, a, :]
        resid = target - u_sa
        loss = float(0.5 * np.sum(resid**2) / batch_n)
        _check_finite(loss, step, cfg)
        dout = np.zeros_like(u_out)
        dout[rows, a, :] = -resid / batch_n
        grad = net.practical_backprop(u_arch, model.u_params, cache, dout)
        apply_update(model.u_params, grad, cfg, model.u_adam)
        model.step += 1
        if model.step % cfg.target_update_interval == 0:
            model.u_target = model.u_params.copy()
        if metrics is not None and step % 100 == 0:
            metrics.append((step, loss, float(np.abs(resid).max())))
    return model


@dataclass
class RndPracticalModel:
    """Value learner plus per-action distillation error, optionally propagated.

    Without the intrinsic value network the uncertainty is the myopic
    distillation error itself; with it, the error is propagated by TD and
    added inside the forward pass (the prior mechanism).
    """

    q: DqnLearner
    r_arch: PracticalArchSpec
    predictor: np.ndarray
    rnd_target: np.ndarray
    adam: AdamState
    intrinsic: DqnLearner | None = None

    def myopic_error(self, s, z) -> np.ndarray:
        u = net.practical_forward(self.r_arch, self.predictor, s, z)
        g = net.practical_forward(self.r_arch, self.rnd_target, s, z)
        return 0.5 * ((u - g) ** 2).mean(axis=2)  # (B, A)

    def greedy_action(self, obs, z) -> int:
        return self.q.greedy_action(obs, z)

    def uncertainty(self, obs, a: int, z) -> float:
        s = np.atleast_2d(obs)
        zz = np.atleast_2d(z)
        myopic = self.myopic_error(s, zz)[0, a]
        if self.intrinsic is None:
            return float(myopic)
        q_intr = self.intrinsic.q_values(s, zz)[0, a]
        return float(q_intr + myopic)


def rnd_offline_train(
    dataset: Dataset,
    arch: PracticalArchSpec,
    config: TrainConfig,
    n_heads: int = 32,
    with_prior: bool = False,
    metrics=None,
) -> RndPracticalModel:
    """Train the value learner, the distillation pair, and optionally the
    intrinsic propagation network with the prior forward rule."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    seeds = _seed_seq(config.seed).spawn(4)
    r_arch = replace(arch, n_heads=n_heads)
    q = init_dqn(arch, config, seeds[0])
    predictor = net.init_practical_params(r_arch, seeds[1], dtype=config.dtype)
    rnd_target = net.init_practical_params(r_arch, seeds[2], dtype=config.dtype)
    model = RndPracticalModel(
        q=q,
        r_arch=r_arch,
        predictor=predictor,
        rnd_target=rnd_target,
        adam=AdamState.like(predictor),
    )
    if with_prior:
        model.intrinsic = init_dqn(arch, config, seeds[3])
    rng = np.random.default_rng(config.seed)
    cfg = config
    for step in range(cfg.n_steps):
        s, a, r, z, sn, done = _sample_batch(dataset, rng, cfg.batch_size, cfg.dtype)
        batch_n = s.shape[0]
        rows = np.arange(batch_n)
        dqn_train_step(q, (s, a, r, z, sn, done))

        # distillation on the logged actions only
        g_out = net.practical_forward(r_arch, model.rnd_target, s, z)
        u_out, cache = net.practical_forward_with_cache(r_arch, model.predictor, s, z)
        resid = g_out[rows, a, :] - u_out[rows, a, :]
        loss = float(0.5 * np.sum(resid**2) / batch_n)
        _check_finite(loss, step, cfg)
        dout = np.zeros_like(u_out)
        dout[rows, a, :] = -resid / batch_n
        grad = net.practical_backprop(r_arch, model.predictor, cache, dout)
        apply_update(model.predictor, grad, cfg, model.adam)

        if model.intrinsic is not None:
            # propagate myopic errors along the value learner's greedy policy,
            # with the myopic error added inside the forward pass on both sides
            intr = model.intrinsic
            r_i = model.myopic_error(s, z)[rows, a]
            a_star = np.argmax(q.q_values(sn, z), axis=1)
            prior_next = model.myopic_error(sn, z)[rows, a_star]
            qi_next = intr.q_values(sn, z, params=intr.target_params)[rows, a_star]
            not_done = 1.0 - done.astype(cfg.dtype)
            prior_here = model.myopic_error(s, z)[rows, a]
            target = cfg.discount * not_done * (qi_next + prior_next) + r_i - prior_here
            out, icache = net.practical_forward_with_cache(arch, intr.params, s, z)
            qi_sa = _gather(out[:, :, 0], a)
            iresid = target - qi_sa
            iloss = float(0.5 * np.sum(iresid**2) / batch_n)
            _check_finite(iloss, intr.step, cfg)
            idout = np.zeros_like(out)
            idout[rows, a, 0] = -iresid / batch_n
            igrad = net.practical_backprop(arch, intr.params, icache, idout)
            apply_update(intr.params, igrad, cfg, intr.adam)
            intr.step += 1
            intr.maybe_update_target()
        if metrics is not None and step % 100 == 0:
            metrics.append((step, loss, float(np.abs(resid).max())))
    return model


def rnd_prior_offline_train(dataset, arch, config, n_heads: int = 32, metrics=None) -> RndPracticalModel:
    return rnd_offline_train(dataset, arch, config, n_heads=n_heads, with_prior=True, metrics=metrics)


# ---------------------------------------------------------------------------
# Online data-collection agent
# ---------------------------------------------------------------------------


class OnlineDqnAgent:
    """Epsilon-greedy learner that trains on its own growing replay buffer."""

    def __init__(self, arch: PracticalArchSpec, config: TrainConfig, seed, warmup: int = 500, eps_final: float = 0.05, update_every: int = 1):
        self.learner = init_dqn(arch, config, seed)
        self.warmup = warmup
        self.eps_final = eps_final
        self.update_every = update_every
        self._replay = []
        self._steps = 0
        self._horizon = max(1, config.n_steps)

    def epsilon(self) -> float:
        frac = min(1.0, self._steps / (0.5 * self._horizon))
        return 1.0 + frac * (self.eps_final - 1.0)

    def select_action(self, obs, z, rng) -> int:
        if rng.random() < self.epsilon() or len(self._replay) < self.warmup:
            return int(rng.integers(self.learner.arch.n_actions))
        return self.learner.greedy_action(obs, z)

    def record(self, s, a, r, z, s_next, rng):
        self._replay.append((s, a, r, z, s_next))
        self._steps += 1
        if len(self._replay) >= self.warmup and self._steps % self.update_every == 0:
            self._train_once(rng)

    def _train_once(self, rng):
        cfg = self.learner.config
        idx = rng.integers(0, len(self._replay), size=min(cfg.batch_size or 128, len(self._replay)))
        rows = [self._replay[i] for i in idx]
        s = np.array([r[0] for r in rows], dtype=cfg.dtype)
        a = np.array([r[1] for r in rows], dtype=np.int64)
        rew = np.array([r[2] for r in rows], dtype=cfg.dtype)
        z = np.array([r[3] for r in rows], dtype=cfg.dtype)
        sn = np.array([r[4] for r in rows], dtype=cfg.dtype)
        done = np.zeros(len(rows), dtype=bool)
        dqn_train_step(self.learner, (s, a, rew, z, sn, done))


def timed(fn, *args, **kwargs):
    """(result, elapsed_seconds) of a training call; used for budget checks."""
    t0 = time.monotonic()
    out = fn(*args, **kwargs)
    return out, time.monotonic() - t0
