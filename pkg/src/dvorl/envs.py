"""Toy parameterized MDPs with controllable dynamics shift.

``SlipGrid`` is a grid world whose moves slip sideways with probability
``slip_prob``; ``DragLine`` is a 1-D position/velocity chain whose velocity
retention is scaled by ``drag``. Source and target domains share states,
actions and rewards and differ only in those shift parameters.

State encodings:

* SlipGrid, ``"coords"``: ``(row / (height - 1), col / (width - 1))``.
* SlipGrid, ``"onehot"``: one-hot over ``height * width`` cells, row-major.
* DragLine: ``(position / (length - 1), velocity / max_speed)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .buffer import ActionSpec, ReplayBuffer

log = logging.getLogger(__name__)

SLIPGRID = "slipgrid"
DRAGLINE = "dragline"

# SlipGrid action ids: up, right, down, left as (d_row, d_col)
MOVES = np.array([[-1, 0], [0, 1], [1, 0], [0, -1]])
# DragLine action ids: brake, coast, thrust
THRUST = np.array([-1, 0, 1])


class EnvError(RuntimeError):
    pass


class DomainConfigError(ValueError):
    """Invalid domain config; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems):
        super().__init__("; ".join(f"{k}: {v}" for k, v in problems))
        self.problems = problems


@dataclass(frozen=True)
class DomainConfig:
    env_kind: str = SLIPGRID
    # SlipGrid
    width: int = 5
    height: int = 5
    slip_prob: float = 0.0
    # start and goal share the top row: the offline learner's fallback for
    # states missing from its data is action 0 (up), which leads back there
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (0, 4)
    pits: tuple[tuple[int, int], ...] = ()
    encoding: str = "coords"
    # DragLine
    length: int = 10
    max_speed: int = 3
    drag: float = 1.0
    # rewards, shared by both kinds
    step_reward: float = -0.05
    goal_reward: float = 1.0
    pit_reward: float = -1.0
    max_steps: int = 50
    gamma: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        object.__setattr__(self, "pits", tuple(tuple(int(v) for v in p) for p in self.pits))
        errors = self.problems()
        if errors:
            raise DomainConfigError(errors)

    def problems(self) -> list[tuple[str, str]]:
        out = []
        if self.env_kind not in (SLIPGRID, DRAGLINE):
            out.append(("env_kind", f"unknown kind {self.env_kind!r}"))
        if not 0.0 <= self.slip_prob < 1.0:
            out.append(("slip_prob", "must lie in [0, 1)"))
        if not 0.0 < self.drag <= 1.0:
            out.append(("drag", "must lie in (0, 1]"))
        if not 0.0 <= self.gamma < 1.0:
            out.append(("gamma", "must lie in [0, 1)"))
        if self.max_steps < 1:
            out.append(("max_steps", "must be >= 1"))
        if self.env_kind == SLIPGRID:
            if self.width < 2 or self.height < 2:
                out.append(("width", "grid must be at least 2x2"))
            cells = [self.start, self.goal, *self.pits]
            for name, cell in zip(["start", "goal"] + ["pits"] * len(self.pits), cells):
                if not (0 <= cell[0] < self.height and 0 <= cell[1] < self.width):
                    out.append((name, f"cell {cell} outside the grid"))
            if self.start == self.goal or self.start in self.pits or self.goal in self.pits:
                out.append(("start", "start, goal and pits must be distinct"))
            if self.encoding not in ("coords", "onehot"):
                out.append(("encoding", "must be 'coords' or 'onehot'"))
        if self.env_kind == DRAGLINE:
            if self.length < 2:
                out.append(("length", "must be >= 2"))
            if self.max_speed < 1:
                out.append(("max_speed", "must be >= 1"))
        return out

    @property
    def n_actions(self) -> int:
        return 4 if self.env_kind == SLIPGRID else 3

    @property
    def n_states(self) -> int:
        if self.env_kind == SLIPGRID:
            return self.width * self.height
        return self.length * (2 * self.max_speed + 1)

    @property
    def state_dim(self) -> int:
        if self.env_kind == SLIPGRID and self.encoding == "onehot":
            return self.width * self.height
        return 2

    @property
    def action_spec(self) -> ActionSpec:
        return ActionSpec.discrete(self.n_actions)

    def tag(self) -> str:
        if self.env_kind == SLIPGRID:
            return f"slipgrid(w={self.width},h={self.height},slip={self.slip_prob!r})"
        return f"dragline(len={self.length},vmax={self.max_speed},drag={self.drag!r})"

    def shifted(self, **changes) -> "DomainConfig":
        return replace(self, **changes)


class SlipGrid:
    """Grid world; a move succeeds w.p. ``1 - slip`` and otherwise deviates
    to one of the two perpendicular directions with equal probability.
    Walls block movement. Entering the goal or a pit ends the episode."""

    def __init__(self, cfg: DomainConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self._pits = set(cfg.pits)
        self.pos = None
        self.t = 0
        self.done = True

    @property
    def n_actions(self):
        return 4

    def state_id(self, pos=None) -> int:
        r, c = self.pos if pos is None else pos
        return r * self.cfg.width + c

    def encode(self, pos) -> np.ndarray:
        r, c = pos
        if self.cfg.encoding == "onehot":
            v = np.zeros(self.cfg.width * self.cfg.height)
            v[self.state_id(pos)] = 1.0
            return v
        return np.array([r / (self.cfg.height - 1), c / (self.cfg.width - 1)])

    def reset(self) -> np.ndarray:
        self.pos = self.cfg.start
        self.t = 0
        self.done = False
        return self.encode(self.pos)

    def _move(self, action: int) -> tuple[int, int]:
        slip = self.cfg.slip_prob
        direction = action
        if slip > 0:
            u = self.rng.random()
            if u < slip / 2:
                direction = (action + 1) % 4
            elif u < slip:
                direction = (action + 3) % 4
        dr, dc = MOVES[direction]
        r = min(max(self.pos[0] + dr, 0), self.cfg.height - 1)
        c = min(max(self.pos[1] + dc, 0), self.cfg.width - 1)
        return int(r), int(c)

    def step(self, action: int):
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < 4:
            raise EnvError(f"invalid action id {action}")
        self.pos = self._move(int(action))
        self.t += 1
        cfg = self.cfg
        if self.pos == cfg.goal:
            reward, terminal = cfg.goal_reward, True
        elif self.pos in self._pits:
            reward, terminal = cfg.pit_reward, True
        else:
            reward, terminal = cfg.step_reward, False
        self.done = terminal or self.t >= cfg.max_steps
        return self.encode(self.pos), float(reward), terminal

    @property
    def truncated(self) -> bool:
        return self.done and self.pos != self.cfg.goal and self.pos not in self._pits


class DragLine:
    """Position/velocity chain. Velocity becomes ``drag * v + thrust``,
    rounded stochastically to an integer and clipped to ``max_speed``;
    position advances by the new velocity. Reaching the right end is the
    goal; the left end is a wall that zeroes the velocity."""

    def __init__(self, cfg: DomainConfig, seed: int = 0):
        self.cfg = cfg
        self.rng = np.random.default_rng(seed)
        self.pos = None
        self.t = 0
        self.done = True

    @property
    def n_actions(self):
        return 3

    def state_id(self, pos=None) -> int:
        x, v = self.pos if pos is None else pos
        return x * (2 * self.cfg.max_speed + 1) + (v + self.cfg.max_speed)

    def encode(self, pos) -> np.ndarray:
        x, v = pos
        return np.array([x / (self.cfg.length - 1), v / self.cfg.max_speed])

    def reset(self) -> np.ndarray:
        self.pos = (0, 0)
        self.t = 0
        self.done = False
        return self.encode(self.pos)

    def step(self, action: int):
        if self.done:
            raise EnvError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < 3:
            raise EnvError(f"invalid action id {action}")
        cfg = self.cfg
        x, v = self.pos
        target_v = cfg.drag * v + THRUST[int(action)]
        lo = np.floor(target_v)
        frac = target_v - lo
        if frac > 0 and self.rng.random() < frac:
            lo += 1
        v = int(np.clip(lo, -cfg.max_speed, cfg.max_speed))
        x = x + v
        if x <= 0:
            x, v = 0, max(v, 0)
        terminal = x >= cfg.length - 1
        x = min(x, cfg.length - 1)
        self.pos = (int(x), int(v))
        self.t += 1
        reward = cfg.goal_reward if terminal else cfg.step_reward
        self.done = terminal or self.t >= cfg.max_steps
        return self.encode(self.pos), float(reward), terminal


def make_env(cfg: DomainConfig, seed: int = 0):
    """Environment for ``cfg``; trajectories are a function of (seed, actions)."""
    if cfg.env_kind == SLIPGRID:
        return SlipGrid(cfg, seed)
    return DragLine(cfg, seed)


# --------------------------------------------------------------------------
# behavioural policy


@dataclass(frozen=True)
class QLearningParams:
    learning_rate: float = 0.1
    epsilon: float = 0.2
    gamma: float | None = None  # None: use the domain's discount


@dataclass
class TabularPolicy:
    """Per-state action distributions indexed by the environment's state id."""

    probs: np.ndarray
    q_values: np.ndarray | None = None
    training_returns: list[float] = field(default_factory=list)

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def act(self, state_id: int, rng: np.random.Generator) -> int:
        p = self.probs[state_id]
        if np.count_nonzero(p) == 1:
            return int(np.flatnonzero(p)[0])
        return int(rng.choice(len(p), p=p))

    def greedy(self, state_id: int) -> int:
        return int(np.argmax(self.probs[state_id]))


def greedy_policy(q: np.ndarray) -> TabularPolicy:
    """Uniform over each state's argmax set."""
    best = q == q.max(axis=1, keepdims=True)
    probs = best / best.sum(axis=1, keepdims=True)
    return TabularPolicy(probs, q_values=q.copy())


def train_behavior(env, episodes: int, params: QLearningParams = QLearningParams(), seed: int = 0):
    """Epsilon-greedy tabular Q-learning; returns the greedy policy.

    Greedy ties are broken uniformly at random, both while learning and in
    the returned policy. Truncated episodes bootstrap from the last state.
    """
    rng = np.random.default_rng(seed)
    cfg = env.cfg
    gamma = cfg.gamma if params.gamma is None else params.gamma
    q = np.zeros((cfg.n_states, env.n_actions))
    returns = []
    for _ in range(episodes):
        env.reset()
        s = env.state_id()
        total = 0.0
        while not env.done:
            if rng.random() < params.epsilon:
                a = int(rng.integers(env.n_actions))
            else:
                row = q[s]
                a = int(rng.choice(np.flatnonzero(row == row.max())))
            _, r, terminal = env.step(a)
            s2 = env.state_id()
            target = r if terminal else r + gamma * q[s2].max()
            q[s, a] += params.learning_rate * (target - q[s, a])
            s = s2
            total += r
        returns.append(total)
    policy = greedy_policy(q)
    policy.training_returns = returns
    return policy


def generate_buffer(env, policy: TabularPolicy, size: int, explore_eps: float, seed: int = 0) -> ReplayBuffer:
    """Roll epsilon-greedy episodes around ``policy`` until ``size`` transitions exist.

    Episode truncation at ``max_steps`` records ``terminal = 0``.
    """
    if size < 1:
        raise ValueError("buffer size must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = env.cfg
    m = cfg.state_dim
    states = np.empty((size, m))
    next_states = np.empty((size, m))
    actions = np.empty(size, dtype=np.int64)
    rewards = np.empty(size)
    terminals = np.zeros(size, dtype=bool)
    i = 0
    while i < size:
        x = env.reset()
        while not env.done and i < size:
            if rng.random() < explore_eps:
                a = int(rng.integers(env.n_actions))
            else:
                a = policy.act(env.state_id(), rng)
            x2, r, terminal = env.step(a)
            states[i], actions[i], next_states[i] = x, a, x2
            rewards[i], terminals[i] = r, terminal
            x = x2
            i += 1
    tag = f"{cfg.tag()}|eps={explore_eps!r}|seed={seed}"
    return ReplayBuffer.from_arrays(states, actions, next_states, rewards, terminals, cfg.action_spec, tag)
