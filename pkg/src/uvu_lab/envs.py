"""MDP simulators, policy families, and offline dataset generation.

Two environments are provided:

* A deterministic chain of states s1..sN where action ``a`` (index 0) walks
  forward and an off-trajectory action ``b`` (index 1), available at a
  configurable set of states, drops into an absorbing sink that no collected
  data ever leaves.  The final chain state is absorbing/terminal and all
  environment rewards are zero; the interesting signal in every experiment
  on this MDP comes from transitions alone.
* A door-opening gridworld: four doors of distinct colors on the four walls,
  a 35-dimensional fully observable state, four discrete actions, and a
  reward of 1 exactly when the agent opens the door whose color matches the
  task encoding (after which it teleports to a random cell).  Episodes end
  only at the fixed episode length.

Datasets are stored columnar for training efficiency and serialize to a
newline-delimited numeric format with a sidecar metadata document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

ACTION_FORWARD = 0  # chain action "a"
ACTION_DIVERGE = 1  # chain action "b"

GRID_ACTIONS = ("turn_left", "turn_right", "forward", "open")
N_DOOR_COLORS = 6
WALLS = ("north", "east", "south", "west")
# direction scalars 1..4; unit movement vectors in (x, y) with y growing south
_DIR_VECS = {1: (1, 0), 2: (0, 1), 3: (-1, 0), 4: (0, -1)}  # east, south, west, north


# ---------------------------------------------------------------------------
# Chain MDP
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChainMdp:
    """Deterministic chain s1..sN; states are 0-indexed internally.

    ``divergence_state`` follows the 1-based s1..sN naming: the default None
    places the off-trajectory action at s3 (or the last nonterminal state of
    a shorter chain).  Pass ``"all"`` to make it available at every
    nonterminal state (the policy-family experiments use this).  Index
    ``n_states - 1`` is the absorbing terminal state and index ``n_states``
    is the absorbing sink entered by the diverging action.
    """

    n_states: int
    discount: float
    divergence_state: int | str | None = None

    def __post_init__(self):
        if self.n_states < 3:
            raise ValueError("chain needs at least 3 states")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError("discount must lie in [0, 1)")
        if self.divergence_state is not None and self.divergence_state != "all":
            d = int(self.divergence_state)
            if not (1 <= d < self.n_states):
                raise ValueError("divergence state must name a nonterminal state")

    @property
    def terminal_index(self) -> int:
        return self.n_states - 1

    @property
    def sink_index(self) -> int:
        return self.n_states

    @property
    def n_state_slots(self) -> int:
        """Rows needed by tables: regular states plus the sink."""
        return self.n_states + 1

    @property
    def b_states(self) -> tuple[int, ...]:
        """0-based indices where the diverging action exists."""
        if self.divergence_state == "all":
            return tuple(range(self.n_states - 1))
        if self.divergence_state is None:
            return (min(3, self.n_states - 1) - 1,)
        return (int(self.divergence_state) - 1,)

    def has_action_b(self, state: int) -> bool:
        return state in self.b_states

    def is_absorbing(self, state: int) -> bool:
        return state >= self.terminal_index

    def step(self, state: int, action: int) -> tuple[int, float, bool]:
        """Deterministic transition; reward is identically zero."""
        if self.is_absorbing(state):
            raise ValueError(f"cannot step from absorbing state {state}")
        if action == ACTION_FORWARD:
            nxt = state + 1
        elif action == ACTION_DIVERGE and self.has_action_b(state):
            nxt = self.sink_index
        else:
            raise ValueError(f"action {action} unavailable in state {state}")
        return nxt, 0.0, self.is_absorbing(nxt)

    def spec_dict(self) -> dict:
        return {
            "kind": "chain",
            "n_states": self.n_states,
            "discount": self.discount,
            "divergence_state": self.divergence_state,
        }


def make_chain(n_states: int, discount: float, divergence_state: int | str | None = None) -> ChainMdp:
    return ChainMdp(n_states=n_states, discount=discount, divergence_state=divergence_state)


@dataclass(frozen=True)
class ChainPolicy:
    """Takes the diverging action with probability 1 - z wherever it exists."""

    z: float

    def __post_init__(self):
        if not (0.0 <= self.z <= 1.0):
            raise ValueError("z must lie in [0, 1]")

    def action_probs(self, mdp: ChainMdp, state: int) -> np.ndarray:
        if mdp.has_action_b(state):
            return np.array([self.z, 1.0 - self.z])
        return np.array([1.0, 0.0])

    def sample(self, mdp: ChainMdp, state: int, rng: np.random.Generator) -> int:
        if mdp.has_action_b(state):
            return ACTION_FORWARD if rng.random() < self.z else ACTION_DIVERGE
        return ACTION_FORWARD


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    z: np.ndarray
    s_next: np.ndarray
    a_next: int


@dataclass
class Dataset:
    """Columnar transition storage plus generator metadata.

    ``done`` marks transitions into absorbing states (bootstrap mask); it is
    derived from the environment spec, not stored in the data file.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    tasks: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    done: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.states.shape[0]

    def __getitem__(self, i: int) -> Transition:
        return Transition(
            s=self.states[i],
            a=int(self.actions[i]),
            r=float(self.rewards[i]),
            z=self.tasks[i],
            s_next=self.next_states[i],
            a_next=int(self.next_actions[i]),
        )

    def transitions(self):
        return (self[i] for i in range(len(self)))


def _empty_dataset(s_dim: int, z_dim: int, metadata: dict) -> Dataset:
    return Dataset(
        states=np.zeros((0, s_dim)),
        actions=np.zeros(0, dtype=np.int64),
        rewards=np.zeros(0),
        tasks=np.zeros((0, z_dim)),
        next_states=np.zeros((0, s_dim)),
        next_actions=np.zeros(0, dtype=np.int64),
        done=np.zeros(0, dtype=bool),
        metadata=metadata,
    )


def rollout_chain(mdp: ChainMdp, policy: ChainPolicy, n_episodes: int, seed) -> Dataset:
    """Roll episodes from s1; each episode ends at the terminal or the sink."""
    if n_episodes < 1:
        raise ValueError("need at least one episode")
    rng = np.random.default_rng(seed)
    rows = {k: [] for k in ("s", "a", "r", "z", "sn", "an", "done")}
    for _ in range(n_episodes):
        state = 0
        while True:
            action = policy.sample(mdp, state, rng)
            nxt, reward, done = mdp.step(state, action)
            a_next = 0 if done else policy.sample(mdp, nxt, rng)
            rows["s"].append([float(state)])
            rows["a"].append(action)
            rows["r"].append(reward)
            rows["z"].append([policy.z])
            rows["sn"].append([float(nxt)])
            rows["an"].append(a_next)
            rows["done"].append(done)
            if done:
                break
            state = nxt
    metadata = {
        "env": mdp.spec_dict(),
        "policy_id": f"chain_z={policy.z}",
        "seed": str(seed),
    }
    return Dataset(
        states=np.array(rows["s"]),
        actions=np.array(rows["a"], dtype=np.int64),
        rewards=np.array(rows["r"]),
        tasks=np.array(rows["z"]),
        next_states=np.array(rows["sn"]),
        next_actions=np.array(rows["an"], dtype=np.int64),
        done=np.array(rows["done"], dtype=bool),
        metadata=metadata,
    )


def resample_next_actions(dataset: Dataset, mdp: ChainMdp, policy: ChainPolicy, seed) -> Dataset:
    """Copy of a chain dataset with next actions redrawn from ``policy``.

    Used when evaluating a policy different from the one that collected the
    data; absorbing next states keep a zero placeholder.
    """
    rng = np.random.default_rng(seed)
    new_a = dataset.next_actions.copy()
    for i in range(len(dataset)):
        nxt = int(dataset.next_states[i, 0])
        if not dataset.done[i]:
            new_a[i] = policy.sample(mdp, nxt, rng)
        else:
            new_a[i] = 0
    out = replace(dataset, next_actions=new_a)
    out.metadata = dict(dataset.metadata, evaluated_policy=f"chain_z={policy.z}")
    return out


# ---------------------------------------------------------------------------
# Gridworld
# ---------------------------------------------------------------------------


@dataclass
class GridLayout:
    side: int
    door_pos: dict  # wall -> (x, y)
    door_color: dict  # wall -> color index
    color_wall: dict  # color index -> wall


class GridWorld:
    """Door-opening gridworld with a 35-dimensional observation.

    Observation layout: agent position (2), agent direction scalar in 1..4
    (1), per-door color one-hots in wall order north/east/south/west (24),
    per-door positions in the same order (8).

    ``layout_pool`` restricts episodes to a fixed set of pre-drawn layouts
    (the desk-scale experiments use this to keep the learning problem inside
    a small step budget); the default None redraws a fresh layout per
    episode.
    """

    OBS_DIM = 35

    def __init__(self, max_size: int, seed, episode_len: int = 50, layout_pool: int | None = None):
        if not (5 <= max_size <= 10):
            raise ValueError("grid size must lie in 5..10")
        self.max_size = max_size
        self.episode_len = episode_len
        self.rng = np.random.default_rng(seed)
        self.layout: GridLayout | None = None
        self.task_color: int | None = None
        self._agent = (1, 1)
        self._dir = 1
        self._t = 0
        self._pool = None
        if layout_pool:
            self._pool = [self._draw_layout() for _ in range(layout_pool)]

    # -- episode control ----------------------------------------------------

    def _draw_layout(self) -> GridLayout:
        side = int(self.rng.integers(5, self.max_size + 1))
        door_pos = {}
        for wall in WALLS:
            off = int(self.rng.integers(1, side - 1))
            if wall == "north":
                door_pos[wall] = (off, 0)
            elif wall == "south":
                door_pos[wall] = (off, side - 1)
            elif wall == "west":
                door_pos[wall] = (0, off)
            else:
                door_pos[wall] = (side - 1, off)
        colors = self.rng.choice(N_DOOR_COLORS, size=4, replace=False)
        door_color = {wall: int(c) for wall, c in zip(WALLS, colors)}
        color_wall = {c: w for w, c in door_color.items()}
        return GridLayout(side, door_pos, door_color, color_wall)

    def reset(self) -> np.ndarray:
        if self._pool is not None:
            self.layout = self._pool[int(self.rng.integers(len(self._pool)))]
        else:
            self.layout = self._draw_layout()
        self._agent = self._random_cell()
        self._dir = int(self.rng.integers(1, 5))
        self._t = 0
        # achievable task by construction: target one of the present doors
        self.task_color = self.layout.door_color[WALLS[int(self.rng.integers(4))]]
        return self.observe()

    def set_task(self, color: int):
        if not (0 <= color < N_DOOR_COLORS):
            raise ValueError("task color out of range")
        self.task_color = int(color)

    def _random_cell(self) -> tuple[int, int]:
        side = self.layout.side
        x = int(self.rng.integers(1, side - 1))
        y = int(self.rng.integers(1, side - 1))
        return (x, y)

    # -- observation --------------------------------------------------------

    def observe(self) -> np.ndarray:
        obs = np.zeros(self.OBS_DIM)
        obs[0], obs[1] = self._agent
        obs[2] = self._dir
        for k, wall in enumerate(WALLS):
            color = self.layout.door_color[wall]
            obs[3 + k * N_DOOR_COLORS + color] = 1.0
            x, y = self.layout.door_pos[wall]
            obs[27 + 2 * k] = x
            obs[27 + 2 * k + 1] = y
        return obs

    def task_one_hot(self) -> np.ndarray:
        z = np.zeros(N_DOOR_COLORS)
        z[self.task_color] = 1.0
        return z

    def target_wall(self) -> str | None:
        """Wall holding the current task's door, or None if absent."""
        return self.layout.color_wall.get(self.task_color)

    # -- dynamics -----------------------------------------------------------

    def step(self, action: int) -> tuple[np.ndarray, float, bool]:
        if self._t >= self.episode_len:
            raise ValueError("episode over; call reset()")
        if action == 0:
            self._dir = 4 if self._dir == 1 else self._dir - 1
        elif action == 1:
            self._dir = 1 if self._dir == 4 else self._dir + 1
        elif action == 2:
            dx, dy = _DIR_VECS[self._dir]
            nx, ny = self._agent[0] + dx, self._agent[1] + dy
            side = self.layout.side
            if 1 <= nx <= side - 2 and 1 <= ny <= side - 2:
                self._agent = (nx, ny)
        elif action == 3:
            reward = self._try_open()
            self._t += 1
            return self.observe(), reward, self._t >= self.episode_len
        else:
            raise ValueError(f"invalid action {action}")
        self._t += 1
        return self.observe(), 0.0, self._t >= self.episode_len

    def _try_open(self) -> float:
        dx, dy = _DIR_VECS[self._dir]
        faced = (self._agent[0] + dx, self._agent[1] + dy)
        for wall in WALLS:
            if self.layout.door_pos[wall] == faced:
                if self.layout.door_color[wall] == self.task_color:
                    self._agent = self._random_cell()
                    return 1.0
                return 0.0
        return 0.0

    def spec_dict(self) -> dict:
        return {
            "kind": "gridworld",
            "max_size": self.max_size,
            "episode_len": self.episode_len,
            "layout_pool": len(self._pool) if self._pool else None,
        }


def make_gridworld(max_size: int, seed, episode_len: int = 50, layout_pool: int | None = None) -> GridWorld:
    return GridWorld(max_size=max_size, seed=seed, episode_len=episode_len, layout_pool=layout_pool)


def collect_gridworld_dataset(env: GridWorld, online_agent, n_steps: int, seed) -> Dataset:
    """Record a replay buffer from a mixture behavior policy.

    When the task's door sits on the south or west wall the online agent's
    (epsilon-greedy, concurrently training) policy acts; on north/east walls
    actions come from a fixed randomly initialized action-value network.  The
    agent observes every logged transition either way.
    """
    from . import net

    rng = np.random.default_rng(seed)
    fixed_spec = net.PracticalArchSpec(
        state_dim=GridWorld.OBS_DIM,
        task_dim=N_DOOR_COLORS,
        embed_width=32,
        trunk_widths=(32,),
        n_actions=len(GRID_ACTIONS),
        n_heads=1,
    )
    fixed_params = net.init_practical_params(fixed_spec, rng.integers(2**31))
    meta = {
        "env": env.spec_dict(),
        "policy_id": "mixture(online_dqn, fixed_random_net)",
        "seed": str(seed),
    }
    if n_steps == 0:
        return _empty_dataset(GridWorld.OBS_DIM, N_DOOR_COLORS, meta)

    cols = {k: [] for k in ("s", "a", "r", "z", "sn", "an")}
    obs = env.reset()
    z = env.task_one_hot()
    expert = env.target_wall() in ("south", "west")

    def behavior_action(o):
        if expert:
            return online_agent.select_action(o, z, rng)
        q = net.practical_forward(fixed_spec, fixed_params, o, z)[0, :, 0]
        return int(np.argmax(q))

    steps = 0
    pending = None  # previous row waiting for its next action
    while steps < n_steps:
        action = behavior_action(obs)
        nxt, reward, done = env.step(action)
        if pending is not None:
            pending["an"] = action
            for k, v in pending.items():
                cols[k].append(v)
        pending = {"s": obs, "a": action, "r": reward, "z": z, "sn": nxt, "an": 0}
        if online_agent is not None and hasattr(online_agent, "record"):
            online_agent.record(obs, action, reward, z, nxt, rng)
        steps += 1
        obs = nxt
        if done:
            # flush the final row of the episode with a placeholder action
            for k, v in pending.items():
                cols[k].append(v)
            pending = None
            obs = env.reset()
            z = env.task_one_hot()
            expert = env.target_wall() in ("south", "west")
    if pending is not None:
        for k, v in pending.items():
            cols[k].append(v)

    n = len(cols["s"])
    return Dataset(
        states=np.array(cols["s"]),
        actions=np.array(cols["a"], dtype=np.int64),
        rewards=np.array(cols["r"]),
        tasks=np.array(cols["z"]),
        next_states=np.array(cols["sn"]),
        next_actions=np.array(cols["an"], dtype=np.int64),
        done=np.zeros(n, dtype=bool),
        metadata=meta,
    )


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def derive_done(metadata: dict, next_states: np.ndarray) -> np.ndarray:
    env = metadata.get("env", {})
    if env.get("kind") == "chain":
        terminal = env["n_states"] - 1
        return next_states[:, 0] >= terminal
    return np.zeros(next_states.shape[0], dtype=bool)


def save_dataset(dataset: Dataset, path: str):
    """Write the delimited data file and its sidecar metadata document."""
    s_dim = dataset.states.shape[1]
    z_dim = dataset.tasks.shape[1]
    with open(path, "w") as fh:
        fh.write(f"# s={s_dim} a=1 r=1 z={z_dim} s_next={s_dim} a_next=1\n")
        for i in range(len(dataset)):
            row = np.concatenate(
                [
                    dataset.states[i],
                    [dataset.actions[i]],
                    [dataset.rewards[i]],
                    dataset.tasks[i],
                    dataset.next_states[i],
                    [dataset.next_actions[i]],
                ]
            )
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")
    with open(path + ".meta.json", "w") as fh:
        json.dump(dataset.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str) -> Dataset:
    with open(path + ".meta.json") as fh:
        metadata = json.load(fh)
    with open(path) as fh:
        header = fh.readline().strip()
        dims = dict(part.split("=") for part in header.lstrip("# ").split())
        s_dim, z_dim = int(dims["s"]), int(dims["z"])
        rows = [np.fromstring(line, sep=" ") for line in fh if line.strip()]
    if rows:
        data = np.vstack(rows)
    else:
        data = np.zeros((0, 2 * s_dim + z_dim + 3))
    states = data[:, :s_dim]
    actions = data[:, s_dim].astype(np.int64)
    rewards = data[:, s_dim + 1]
    tasks = data[:, s_dim + 2 : s_dim + 2 + z_dim]
    next_states = data[:, s_dim + 2 + z_dim : 2 * s_dim + 2 + z_dim]
    next_actions = data[:, -1].astype(np.int64)
    return Dataset(
        states=states,
        actions=actions,
        rewards=rewards,
        tasks=tasks,
        next_states=next_states,
        next_actions=next_actions,
        done=derive_done(metadata, next_states),
        metadata=metadata,
    )


# ---------------------------------------------------------------------------
# Chain input encoding for function-approximation experiments
# ---------------------------------------------------------------------------


def chain_input_dim(mdp: ChainMdp) -> int:
    return mdp.n_state_slots + 2 + 1


def encode_chain_inputs(mdp: ChainMdp, states, actions, zs, *, normalize: bool = True) -> np.ndarray:
    """One-hot state and action plus the scalar policy parameter.

    Theory-mode callers keep ``normalize=True`` so inputs live on the unit
    sphere.
    """
    states = np.asarray(states, dtype=np.int64).ravel()
    actions = np.asarray(actions, dtype=np.int64).ravel()
    zs = np.asarray(zs, dtype=np.float64).ravel()
    n = states.size
    out = np.zeros((n, chain_input_dim(mdp)))
    out[np.arange(n), states] = 1.0
    out[np.arange(n), mdp.n_state_slots + actions] = 1.0
    out[:, -1] = zs
    if normalize:
        out /= np.linalg.norm(out, axis=1, keepdims=True)
    return out
