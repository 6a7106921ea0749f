"""Deep Sea Treasure environments and an episode roller.

Environments are immutable value objects: ``reset`` returns a state and
``step(state, action)`` is a pure function of its arguments, so a rollout
owns all mutable episode state and parallel rollouts never interfere.

Reward layout is fixed for both environments: objective 0 is the treasure
value collected on entry (0 otherwise), objective 1 is the -1 time penalty
charged on every step.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import InvalidArgumentError
from .validation import check_discount, check_positive, check_positive_int

TIME_PENALTY = -1.0


def load_dst_map(path=None):
    """Load a treasure map; ``None`` loads the bundled classic 11 x 10 layout."""
    if path is None:
        text = resources.files("qpensieve").joinpath("data/dst_map.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    n_rows, n_cols = int(data["n_rows"]), int(data["n_cols"])
    treasures = {(int(t["row"]), int(t["col"])): float(t["value"]) for t in data["treasures"]}
    for r, c in treasures:
        if not (0 <= r < n_rows and 0 <= c < n_cols):
            raise InvalidArgumentError(f"treasure ({r}, {c}) lies outside the grid")
    return {"n_rows": n_rows, "n_cols": n_cols, "start": tuple(data.get("start", (0, 0))), "treasures": treasures}


def _rock_mask(n_rows, n_cols, treasures):
    """Cells below each column's treasure are sea floor."""
    rock = np.zeros((n_rows, n_cols), dtype=bool)
    for (r, c) in treasures:
        rock[r + 1 :, c] = True
    return rock


@dataclass(frozen=True)
class EnvSpec:
    name: str
    d: int
    max_episode_steps: int
    n_states: int = None
    n_actions: int = None
    state_dim: int = None
    action_dim: int = None
    action_low: float = None
    action_high: float = None

    @property
    def is_tabular(self):
        return self.n_states is not None


class TabularDST:
    """Grid Deep Sea Treasure with four-direction moves.

    States are flat cell indices ``row * n_cols + col``; actions are
    0=up, 1=down, 2=left, 3=right.  Moves off the grid or into sea floor
    leave the agent in place.
    """

    MOVES = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])

    def __init__(self, map_file=None, max_episode_steps=100):
        dst = load_dst_map(map_file)
        self.n_rows, self.n_cols = dst["n_rows"], dst["n_cols"]
        self.treasures = dst["treasures"]
        self.start = dst["start"]
        self.rock = _rock_mask(self.n_rows, self.n_cols, self.treasures)
        self.spec = EnvSpec(
            name="dst-tabular",
            d=2,
            max_episode_steps=check_positive_int(max_episode_steps, "max_episode_steps"),
            n_states=self.n_rows * self.n_cols,
            n_actions=4,
        )

    @classmethod
    def from_config(cls, config):
        return cls(map_file=config.get("map_file"), max_episode_steps=config.get("max_episode_steps", 100))

    def cell(self, state):
        state = int(state)
        if not 0 <= state < self.spec.n_states:
            raise InvalidArgumentError(f"state index {state} out of range")
        r, c = divmod(state, self.n_cols)
        if self.rock[r, c]:
            raise InvalidArgumentError(f"state {state} is sea floor")
        return r, c

    def state_index(self, row, col):
        return row * self.n_cols + col

    def reset(self, rng=None):
        return self.state_index(*self.start)

    def step(self, state, action):
        r, c = self.cell(state)
        action = int(action)
        if not 0 <= action < 4:
            raise InvalidArgumentError(f"action {action} out of range")
        nr, nc = r + self.MOVES[action][0], c + self.MOVES[action][1]
        if not (0 <= nr < self.n_rows and 0 <= nc < self.n_cols) or self.rock[nr, nc]:
            nr, nc = r, c
        value = self.treasures.get((nr, nc))
        done = value is not None
        reward = np.array([value if done else 0.0, TIME_PENALTY])
        return int(self.state_index(nr, nc)), reward, done

    def clip_action(self, action):
        return int(action)

    def observe(self, state):
        """One-hot feature vector for a cell index."""
        obs = np.zeros(self.spec.n_states)
        obs[int(state)] = 1.0
        return obs

    def to_momdp(self, gamma):
        """Tabular MOMDP view; treasure and sea-floor cells become zero-reward absorbing states."""
        from .momdp import TabularMOMDP

        S, A = self.spec.n_states, 4
        P = np.zeros((S, A, S))
        R = np.zeros((S, A, 2))
        for s in range(S):
            r, c = divmod(s, self.n_cols)
            if self.rock[r, c] or (r, c) in self.treasures:
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                s2, rew, _ = self.step(s, a)
                P[s, a, s2] = 1.0
                R[s, a] = rew
        init = np.zeros(S)
        init[self.reset()] = 1.0
        return TabularMOMDP(P, R, gamma, initial_dist=init, meta={"env": "dst-tabular"})


class ContinuousDST:
    """Deep Sea Treasure with displacement actions inside the unit disc.

    The position ``(x, y)`` lives in ``[0, width] x [0, depth]`` where ``x``
    runs over columns and ``y`` over depth; grid cell ``(row, col)`` covers
    ``[col, col + 1) x [row, row + 1)``.  A treasure is collected when the
    agent lands within ``capture_radius`` of its cell centre.  Actions are
    2-vectors; anything longer than 1 is rescaled onto the unit circle.
    Walls clip movement: the target is clamped into the box, and a move that
    would end on sea floor keeps only its horizontal or, failing that, its
    vertical component; if both are blocked the agent stays put.
    """

    def __init__(self, map_file=None, capture_radius=0.4, max_episode_steps=100):
        dst = load_dst_map(map_file)
        self.n_rows, self.n_cols = dst["n_rows"], dst["n_cols"]
        self.treasures = dst["treasures"]
        self.rock = _rock_mask(self.n_rows, self.n_cols, self.treasures)
        self.capture_radius = check_positive(capture_radius, "capture_radius")
        self.box = np.array([float(self.n_cols), float(self.n_rows)])
        self.start = np.array([float(dst["start"][1]), float(dst["start"][0])])
        cells = sorted(self.treasures)
        self._centers = np.array([(c + 0.5, r + 0.5) for r, c in cells])
        self._values = np.array([self.treasures[rc] for rc in cells])
        self.spec = EnvSpec(
            name="dst-continuous",
            d=2,
            max_episode_steps=check_positive_int(max_episode_steps, "max_episode_steps"),
            state_dim=2,
            action_dim=2,
            action_low=-1.0,
            action_high=1.0,
        )

    @classmethod
    def from_config(cls, config):
        return cls(
            map_file=config.get("map_file"),
            capture_radius=config.get("capture_radius", 0.4),
            max_episode_steps=config.get("max_episode_steps", 100),
        )

    def to_config(self):
        return {"capture_radius": self.capture_radius, "max_episode_steps": self.spec.max_episode_steps}

    def reset(self, rng=None):
        return self.start.copy()

    def observe(self, state):
        """Network features: the position scaled into the unit box."""
        return np.asarray(state, dtype=float) / self.box

    @staticmethod
    def clip_action(action):
        a = np.asarray(action, dtype=float).reshape(2)
        norm = np.hypot(a[0], a[1])
        return a / norm if norm > 1.0 else a

    def _blocked(self, pos):
        x, y = pos
        if not (0.0 <= x <= self.box[0] and 0.0 <= y <= self.box[1]):
            return True
        col = min(int(x), self.n_cols - 1)
        row = min(int(y), self.n_rows - 1)
        return bool(self.rock[row, col])

    def _resolve(self, pos, delta):
        """Clip the move into the box, then slide along sea floor by one axis if the full move hits it."""
        target = np.clip(pos + delta, 0.0, self.box)
        if not self._blocked(target):
            return target
        for slide in (np.array([target[0], pos[1]]), np.array([pos[0], target[1]])):
            if not self._blocked(slide):
                return slide
        return pos.copy()

    def step(self, state, action):
        pos = np.asarray(state, dtype=float)
        if pos.shape != (2,) or not np.all(np.isfinite(pos)) or self._blocked(pos):
            raise InvalidArgumentError(f"invalid position {state!r}")
        new = self._resolve(pos, self.clip_action(action))
        dist = np.hypot(*(self._centers - new).T)
        hit = np.flatnonzero(dist <= self.capture_radius)
        done = hit.size > 0
        treasure = float(self._values[hit[0]]) if done else 0.0
        return new, np.array([treasure, TIME_PENALTY]), done


ENVIRONMENTS = {"dst-tabular": TabularDST, "dst-continuous": ContinuousDST}


def make_env(env_id, config=None):
    try:
        cls = ENVIRONMENTS[env_id]
    except KeyError:
        raise InvalidArgumentError(f"unknown environment {env_id!r}; choose from {sorted(ENVIRONMENTS)}") from None
    return cls.from_config(config or {})


@dataclass(frozen=True)
class Step:
    state: object
    action: object
    reward: np.ndarray
    next_state: object
    done: bool


@dataclass
class Trajectory:
    steps: list
    gamma: float
    discounted_return: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.discounted_return is None:
            self.discounted_return = self.recompute_return()

    @property
    def length(self):
        return len(self.steps)

    @property
    def total_reward(self):
        """Undiscounted sum of reward vectors."""
        return np.sum([s.reward for s in self.steps], axis=0)

    def recompute_return(self):
        if not self.steps:
            return np.zeros(0)
        rewards = np.array([s.reward for s in self.steps])
        return (self.gamma ** np.arange(len(rewards))) @ rewards

    def to_csv(self, path=None):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        first = self.steps[0] if self.steps else None
        ns = np.size(first.state) if first else 0
        na = np.size(first.action) if first else 0
        nr = np.size(first.reward) if first else 0
        writer.writerow(
            ["t"]
            + [f"state_{i}" for i in range(ns)]
            + [f"action_{i}" for i in range(na)]
            + [f"reward_{i}" for i in range(nr)]
            + [f"next_state_{i}" for i in range(ns)]
            + ["done"]
        )
        for t, s in enumerate(self.steps):
            writer.writerow(
                [t]
                + [repr(float(v)) for v in np.ravel(s.state)]
                + [repr(float(v)) for v in np.ravel(s.action)]
                + [repr(float(v)) for v in np.ravel(s.reward)]
                + [repr(float(v)) for v in np.ravel(s.next_state)]
                + [int(s.done)]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def rollout(env, policy_fn, pref, gamma, rng=None, max_steps=None):
    """Run one episode of ``policy_fn(state, pref, rng) -> action``.

    Stops on termination or after ``max_steps`` (default: the environment's
    ``max_episode_steps``).  Actions are stored as executed, i.e. after the
    environment's action clipping.
    """
    gamma = check_discount(gamma)
    limit = env.spec.max_episode_steps if max_steps is None else check_positive_int(max_steps, "max_steps")
    state = env.reset(rng)
    steps = []
    for _ in range(limit):
        action = env.clip_action(policy_fn(state, pref, rng))
        next_state, reward, done = env.step(state, action)
        steps.append(Step(state, action, reward, next_state, done))
        state = next_state
        if done:
            break
    return Trajectory(steps, gamma)
