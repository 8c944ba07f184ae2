"""Shared test infrastructure: a scripted navigation expert for the gridworld.

Navigates to the cell adjacent to the task's door, faces it, and opens it;
used to generate competent behavior without training."""

import numpy as np


class ScriptedDoorExpert:
    def __init__(self, env):
        self.env = env

    def greedy_action(self, obs, z):
        env = self.env
        color = int(np.argmax(z))
        wall = env.layout.color_wall.get(color)
        if wall is None:
            return 0
        dx, dy = env.layout.door_pos[wall]
        side = env.layout.side
        if wall == "north":
            cell, face = (dx, 1), 4
        elif wall == "south":
            cell, face = (dx, side - 2), 2
        elif wall == "west":
            cell, face = (1, dy), 3
        else:
            cell, face = (side - 2, dy), 1
        ax, ay = env._agent
        d = env._dir
        if (ax, ay) == cell:
            return 3 if d == face else self._turn(d, face)
        if ax != cell[0]:
            want = 1 if cell[0] > ax else 3
        else:
            want = 2 if cell[1] > ay else 4
        return 2 if d == want else self._turn(d, want)

    @staticmethod
    def _turn(d, want):
        return 1 if (want - d) % 4 <= 2 else 0


class MixtureCollector:
    """Expert actions with epsilon-random mixing; records nothing."""

    def __init__(self, env, eps=0.1):
        self.expert = ScriptedDoorExpert(env)
        self.eps = eps

    def select_action(self, obs, z, rng):
        if rng.random() < self.eps:
            return int(rng.integers(4))
        return self.expert.greedy_action(obs, z)

    def record(self, *args):
        pass
