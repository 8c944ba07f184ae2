"""Exact tabular uncertainty estimation on the chain MDP.

An online table ``u`` chases a frozen random table ``g`` through bootstrapped
assignments driven by rewards that ``g`` itself generates, so ``g`` is by
construction a zero-error solution of the induced value problem.  Where the
evaluated policy walks off the collected data, ``u`` bootstraps from entries
that never receive updates and the squared gap (u - g)^2 survives as an
uncertainty signal.  An ensemble of identically trained tables with real
(zero) rewards provides the matching variance estimator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .envs import ChainMdp, ChainPolicy, Dataset

N_CHAIN_ACTIONS = 2


@dataclass
class TabularUvuState:
    """Online/target table pair for one head; ``g`` is frozen after init."""

    u: np.ndarray
    g: np.ndarray
    discount: float
    rng: np.random.Generator

    def __post_init__(self):
        self.g.setflags(write=False)


def init_tabular(mdp: ChainMdp, seed, n_heads: int) -> list[TabularUvuState]:
    """Independently initialized (u, g) pairs with standard-normal entries."""
    if n_heads < 1:
        raise ValueError("n_heads must be >= 1")
    shape = (mdp.n_state_slots, N_CHAIN_ACTIONS)
    states = []
    for child in np.random.SeedSequence(seed).spawn(n_heads):
        rng = np.random.default_rng(child)
        states.append(
            TabularUvuState(
                u=rng.standard_normal(shape),
                g=rng.standard_normal(shape),
                discount=mdp.discount,
                rng=rng,
            )
        )
    return states


def _check_index(table: np.ndarray, s: int, a: int):
    if not (0 <= s < table.shape[0] and 0 <= a < table.shape[1]):
        raise IndexError(f"table index ({s}, {a}) out of range for {table.shape}")


def tabular_synthetic_reward(state: TabularUvuState, mdp: ChainMdp, s: int, a: int, s_next: int, a_next: int) -> float:
    """g[s,a] - gamma * g[s',a'], with absorbing next states worth zero."""
    _check_index(state.g, s, a)
    if mdp.is_absorbing(s_next):
        return float(state.g[s, a])
    _check_index(state.g, s_next, a_next)
    return float(state.g[s, a] - state.discount * state.g[s_next, a_next])


def tabular_sweep(
    state: TabularUvuState,
    mdp: ChainMdp,
    dataset: Dataset,
    policy: ChainPolicy,
    n_sweeps: int,
    tol: float = 1e-10,
) -> TabularUvuState:
    """Apply the bootstrapped assignment over all transitions, repeatedly.

    Next actions are redrawn from the evaluated policy at every visit; for
    deterministic policies the sweep stops early once the largest per-entry
    update falls below ``tol``.
    """
    if n_sweeps < 1:
        raise ValueError("n_sweeps must be >= 1")
    s_col = dataset.states[:, 0].astype(int)
    sn_col = dataset.next_states[:, 0].astype(int)
    a_col = dataset.actions
    for _ in range(n_sweeps):
        max_delta = 0.0
        for i in range(len(dataset)):
            s, a, s_next = int(s_col[i]), int(a_col[i]), int(sn_col[i])
            if mdp.is_absorbing(s_next):
                target = float(state.g[s, a])
            else:
                a_next = policy.sample(mdp, s_next, state.rng)
                r_g = state.g[s, a] - state.discount * state.g[s_next, a_next]
                target = float(r_g + state.discount * state.u[s_next, a_next])
            max_delta = max(max_delta, abs(target - state.u[s, a]))
            state.u[s, a] = target
        if max_delta < tol:
            break
    return state


def tabular_error(state: TabularUvuState, s: int, a: int) -> float:
    """Squared online/target gap at one state-action pair."""
    _check_index(state.u, s, a)
    return float((state.u[s, a] - state.g[s, a]) ** 2)


def tabular_td_residuals(state: TabularUvuState, mdp: ChainMdp, dataset: Dataset, policy: ChainPolicy, table: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """TD residuals of an arbitrary table against the synthetic rewards.

    Evaluating the frozen target table itself must give exactly zero on
    every transition, for any discount.
    """
    res = np.zeros(len(dataset))
    for i in range(len(dataset)):
        s, a = int(dataset.states[i, 0]), int(dataset.actions[i])
        s_next = int(dataset.next_states[i, 0])
        if mdp.is_absorbing(s_next):
            r_g = state.g[s, a]
            boot = 0.0
        else:
            a_next = policy.sample(mdp, s_next, rng)
            r_g = state.g[s, a] - state.discount * state.g[s_next, a_next]
            boot = state.discount * table[s_next, a_next]
        res[i] = r_g + boot - table[s, a]
    return res


def tabular_ensemble_variance(
    mdp: ChainMdp,
    dataset: Dataset,
    policy: ChainPolicy,
    n_members: int,
    seed,
    n_sweeps: int = 64,
) -> np.ndarray:
    """Per-entry sample variance of independently trained plain value tables.

    Members run the same bootstrapped assignment as the uncertainty sweep
    but with the environment's (zero) rewards.
    """
    if n_members < 2:
        raise ValueError("variance needs at least 2 members")
    shape = (mdp.n_state_slots, N_CHAIN_ACTIONS)
    tables = np.empty((n_members,) + shape)
    s_col = dataset.states[:, 0].astype(int)
    sn_col = dataset.next_states[:, 0].astype(int)
    a_col = dataset.actions
    rewards = dataset.rewards
    for k, child in enumerate(np.random.SeedSequence(seed).spawn(n_members)):
        rng = np.random.default_rng(child)
        q = rng.standard_normal(shape)
        for _ in range(n_sweeps):
            max_delta = 0.0
            for i in range(len(dataset)):
                s, a, s_next = int(s_col[i]), int(a_col[i]), int(sn_col[i])
                if mdp.is_absorbing(s_next):
                    target = float(rewards[i])
                else:
                    a_next = policy.sample(mdp, s_next, rng)
                    target = float(rewards[i] + mdp.discount * q[s_next, a_next])
                max_delta = max(max_delta, abs(target - q[s, a]))
                q[s, a] = target
            if max_delta < 1e-10:
                break
        tables[k] = q
    return tables.var(axis=0, ddof=1)


def tabular_uvu_z_profile(
    mdp: ChainMdp,
    dataset: Dataset,
    z_values,
    n_heads: int,
    seed,
    n_sweeps: int = 64,
) -> np.ndarray:
    """Mean over heads of (u-g)^2 at (state, forward action) per z value.

    Returns an array of shape (n_states - 1, len(z_values)); heads are
    re-initialized identically for every z so columns differ only through
    the evaluated policy.
    """
    z_values = list(z_values)
    out = np.zeros((mdp.n_states - 1, len(z_values)))
    for col, z in enumerate(z_values):
        policy = ChainPolicy(z=z)
        heads = init_tabular(mdp, seed, n_heads)
        for head in heads:
            tabular_sweep(head, mdp, dataset, policy, n_sweeps)
        for s in range(mdp.n_states - 1):
            out[s, col] = float(np.mean([tabular_error(h, s, 0) for h in heads]))
    return out


def tabular_ensemble_z_profile(
    mdp: ChainMdp,
    dataset: Dataset,
    z_values,
    n_members: int,
    seed,
    n_sweeps: int = 64,
) -> np.ndarray:
    """Ensemble variance at (state, forward action) per z value."""
    z_values = list(z_values)
    out = np.zeros((mdp.n_states - 1, len(z_values)))
    for col, z in enumerate(z_values):
        var = tabular_ensemble_variance(mdp, dataset, ChainPolicy(z=z), n_members, seed, n_sweeps)
        out[:, col] = var[: mdp.n_states - 1, 0]
    return out


def export_table_csv(table: np.ndarray, path: str, columns=None):
    """Rows are states, columns are actions (or z-grid values)."""
    table = np.atleast_2d(table)
    if columns is None:
        columns = [f"a{j}" for j in range(table.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", *columns])
        for i, row in enumerate(table):
            writer.writerow([f"s{i + 1}", *[format(v, ".17g") for v in row]])
