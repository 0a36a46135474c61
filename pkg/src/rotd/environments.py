"""Benchmark problems and sample collection.

Finite problems are described by an :class:`MdpModel` (target-policy
transition kernel, expected rewards, discount, and the sampling state
distribution).  Mountain car is a simulator stepped by a behavior policy.
Collected transitions are stored column-wise in an :class:`EpisodeBatch`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .features import FeatureMap, TableFeatures, dependent_features, inverted_features, pad_terminal_states, tabular_features

_TOL = 1e-12


@dataclass(frozen=True)
class MdpModel:
    """Finite Markov reward process under a fixed target policy.

    ``transition[s, s']`` is the target-policy kernel, ``reward[s]`` the
    expected one-step reward, ``state_dist`` the distribution ``xi`` from which
    sampled start states are drawn (the diagonal of Xi).  ``reward_matrix``,
    when given, holds per-transition rewards and must agree with ``reward``.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    state_dist: np.ndarray
    absorbing: tuple = ()
    reward_matrix: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        R = np.array(self.reward, dtype=float)
        xi = np.array(self.state_dist, dtype=float)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("transition must be square")
        if R.shape != (n,) or xi.shape != (n,):
            raise ValueError("reward and state_dist must have one entry per state")
        if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > _TOL):
            raise ValueError("transition rows must be nonnegative and sum to 1")
        if np.any(xi < 0) or abs(xi.sum() - 1.0) > _TOL:
            raise ValueError("state_dist must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        for s in self.absorbing:
            if P[s, s] != 1.0 or R[s] != 0.0:
                raise ValueError(f"absorbing state {s} must self-loop with zero reward")
        if self.reward_matrix is not None:
            Rm = np.array(self.reward_matrix, dtype=float)
            if Rm.shape != (n, n):
                raise ValueError("reward_matrix must be n_states x n_states")
            if np.any(np.abs((P * Rm).sum(axis=1) - R) > _TOL):
                raise ValueError("reward_matrix disagrees with expected reward vector")
            Rm.setflags(write=False)
            object.__setattr__(self, "reward_matrix", Rm)
        for name, arr in (("transition", P), ("reward", R), ("state_dist", xi)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "absorbing", tuple(int(s) for s in self.absorbing))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass(frozen=True)
class Sample:
    """Learning payload of one transition."""

    phi: np.ndarray
    reward: float
    phi_next: np.ndarray
    phi_bar_next: np.ndarray | None = None

    def __post_init__(self):
        if self.phi_bar_next is None:
            object.__setattr__(self, "phi_bar_next", self.phi_next)
        d = len(self.phi)
        if len(self.phi_next) != d or len(self.phi_bar_next) != d:
            raise ValueError("feature vectors of a sample must share one length")


@dataclass
class EpisodeBatch:
    """Transitions in collection order, stored as arrays.

    ``states``/``next_states`` keep the raw state (an integer index for
    finite models, coordinates for simulators) so features can be
    recomputed; ``episode_boundaries`` lists the exclusive end index of each
    trajectory.
    """

    phi: np.ndarray
    reward: np.ndarray
    phi_next: np.ndarray
    phi_bar_next: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    terminal: np.ndarray
    episode_boundaries: np.ndarray
    seed: int

    def __post_init__(self):
        b = np.asarray(self.episode_boundaries, dtype=np.int64)
        if np.any(np.diff(b) <= 0) or (len(b) and (b[0] <= 0 or b[-1] > len(self))):
            raise ValueError("episode boundaries must be strictly increasing and within the batch")
        self.episode_boundaries = b

    def __len__(self):
        return len(self.reward)

    def __getitem__(self, i) -> Sample:
        return Sample(self.phi[i], float(self.reward[i]), self.phi_next[i], self.phi_bar_next[i])

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    def episode_starts(self) -> np.ndarray:
        """Boolean mask marking the first sample of every trajectory."""
        starts = np.zeros(len(self), dtype=bool)
        if len(self):
            starts[0] = True
            ends = self.episode_boundaries[self.episode_boundaries < len(self)]
            starts[ends] = True
        return starts


# --------------------------------------------------------------------------
# Star (Baird) counterexample

BAIRD_THETA0 = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 10.0, 1.0])


def star_mdp(gamma: float = 0.99) -> tuple[MdpModel, TableFeatures]:
    """Baird's 7-state star problem.

    States 0..5 are the outer states, state 6 the centre.  The target
    policy always jumps to the centre; samples start uniformly over all
    seven states.  Rewards are zero everywhere.
    """
    n = 7
    P = np.zeros((n, n))
    P[:, 6] = 1.0
    table = np.zeros((n, 8))
    for i in range(6):
        table[i, i] = 2.0
        table[i, 7] = 1.0
    table[6, 6] = 1.0
    table[6, 7] = 2.0
    model = MdpModel(P, np.zeros(n), gamma, np.full(n, 1.0 / n))
    return model, TableFeatures(table, "baird")


# --------------------------------------------------------------------------
# Random-walk chain

def _restart_visit_distribution(P: np.ndarray, interior: Sequence[int], start: int) -> np.ndarray:
    # expected visits before absorption from `start`, via the fundamental matrix
    Q = P[np.ix_(interior, interior)]
    e = np.zeros(len(interior))
    e[list(interior).index(start)] = 1.0
    visits = np.linalg.solve((np.eye(len(interior)) - Q).T, e)
    return visits / visits.sum()


def random_walk(n_interior: int = 5, gamma: float = 0.9) -> MdpModel:
    """Symmetric walk with absorbing ends at indices 0 and ``n_interior + 1``.

    Entering the right end pays +1.  The sampling distribution is the
    long-run visit frequency of the walk restarted at the centre after each
    absorption, restricted to the interior states.
    """
    n = n_interior + 2
    P = np.zeros((n, n))
    Rm = np.zeros((n, n))
    P[0, 0] = P[n - 1, n - 1] = 1.0
    for s in range(1, n - 1):
        P[s, s - 1] = 0.5
        P[s, s + 1] = 0.5
    Rm[n - 2, n - 1] = 1.0
    R = (P * Rm).sum(axis=1)
    interior = list(range(1, n - 1))
    xi = np.zeros(n)
    xi[1 : n - 1] = _restart_visit_distribution(P, interior, start=(n - 1) // 2)
    return MdpModel(P, R, gamma, xi, absorbing=(0, n - 1), reward_matrix=Rm)


def random_walk_features(kind: str, n_interior: int = 5) -> TableFeatures:
    """One of the three bases for the random walk, zero on the absorbing ends."""
    builders = {"tabular": tabular_features, "inverted": inverted_features, "dependent": dependent_features}
    if kind not in builders:
        raise ValueError(f"unknown random-walk basis {kind!r}; choose from {sorted(builders)}")
    return pad_terminal_states(builders[kind](n_interior))


def random_mdp(seed: int, n_states: int = 20, d: int = 5, gamma: float = 0.9) -> tuple[MdpModel, TableFeatures]:
    """Random dense MRP with Gaussian features, used for synthetic checks."""
    rng = np.random.default_rng(seed)
    table = rng.standard_normal((n_states, d)) / math.sqrt(d)
    P = rng.dirichlet(np.ones(n_states), size=n_states)
    P /= P.sum(axis=1, keepdims=True)
    xi = rng.dirichlet(np.full(n_states, 5.0))
    xi /= xi.sum()
    R = rng.standard_normal(n_states)
    return MdpModel(P, R, gamma, xi), TableFeatures(table, "random")


# --------------------------------------------------------------------------
# Mountain car

POSITION_BOUNDS = (-1.2, 0.6)
VELOCITY_BOUNDS = (-0.07, 0.07)
GOAL_POSITION = 0.5
MOUNTAIN_CAR_BOUNDS = (POSITION_BOUNDS, VELOCITY_BOUNDS)


def mountain_car_step(state, action: int):
    """One step of the standard mountain-car dynamics.

    Returns ``(next_state, reward, done)``; reward is -1 on every step.
    """
    if action not in (0, 1, 2):
        raise ValueError(f"action must be 0, 1 or 2, got {action!r}")
    p, v = float(state[0]), float(state[1])
    v = min(max(v + 0.001 * (action - 1) - 0.0025 * math.cos(3.0 * p), VELOCITY_BOUNDS[0]), VELOCITY_BOUNDS[1])
    p = min(max(p + v, POSITION_BOUNDS[0]), POSITION_BOUNDS[1])
    if p <= POSITION_BOUNDS[0] and v < 0.0:
        v = 0.0
    return (p, v), -1.0, p >= GOAL_POSITION


class MountainCar:
    """Simulator wrapper with the start-state convention used for sampling."""

    n_actions = 3
    state_dim = 2
    bounds = MOUNTAIN_CAR_BOUNDS

    def __init__(self, start_low: float = POSITION_BOUNDS[0], start_high: float = GOAL_POSITION):
        self.start_low = start_low
        self.start_high = start_high

    def reset(self, rng: np.random.Generator):
        return (float(rng.uniform(self.start_low, self.start_high)), 0.0)

    def step(self, state, action):
        return mountain_car_step(state, action)


def energy_pumping_policy(state, rng: np.random.Generator | None = None) -> int:
    """Push in the direction of motion (full throttle right when at rest)."""
    return 2 if state[1] >= 0.0 else 0


# --------------------------------------------------------------------------
# Sample collection

def collect_iid_samples(model: MdpModel, features: FeatureMap, n: int, seed: int) -> EpisodeBatch:
    """``n`` independent transitions: ``s ~ xi``, ``s' ~ P(s, .)``.

    Each transition is its own trajectory (traces reset every sample).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    s = rng.choice(model.n_states, size=n, p=model.state_dist)
    u = rng.random(n)
    cdf = np.cumsum(model.transition, axis=1)
    cdf[:, -1] = 1.0
    # first index whose cdf exceeds u; never a zero-probability successor
    s_next = (u[:, None] >= cdf[s]).sum(axis=1)
    if model.reward_matrix is not None:
        r = model.reward_matrix[s, s_next]
    else:
        r = model.reward[s]
    phi = features.batch(s)
    phi_next = features.batch(s_next)
    terminal = np.isin(s_next, model.absorbing)
    phi_next[terminal] = 0.0
    return EpisodeBatch(
        phi=phi,
        reward=np.asarray(r, dtype=float),
        phi_next=phi_next,
        phi_bar_next=phi_next.copy(),
        states=s.astype(float)[:, None],
        actions=np.full(n, -1, dtype=np.int64),
        next_states=s_next.astype(float)[:, None],
        terminal=terminal,
        episode_boundaries=np.arange(1, n + 1),
        seed=seed,
    )


def collect_episodes(
    env,
    behavior: Callable,
    features: FeatureMap,
    n_episodes: int,
    max_steps: int,
    seed: int,
    restart_on_done: bool = False,
) -> EpisodeBatch:
    """Roll out ``n_episodes`` windows of at most ``max_steps`` steps each.

    With ``restart_on_done`` a window that reaches the goal restarts from a
    fresh start state and keeps collecting until ``max_steps`` transitions,
    so the batch always holds ``n_episodes * max_steps`` samples.  Terminal
    transitions get a zero next-state feature vector.
    """
    if n_episodes < 1 or max_steps < 1:
        raise ValueError("n_episodes and max_steps must be >= 1")
    rng = np.random.default_rng(seed)
    states, actions, rewards, next_states, terminal, bounds = [], [], [], [], [], []
    for _ in range(n_episodes):
        s = env.reset(rng)
        for _t in range(max_steps):
            a = behavior(s, rng)
            s2, r, done = env.step(s, a)
            states.append(s)
            actions.append(a)
            rewards.append(r)
            next_states.append(s2)
            terminal.append(done)
            if done:
                bounds.append(len(states))
                if not restart_on_done:
                    break
                s = env.reset(rng)
            else:
                s = s2
        if not bounds or bounds[-1] != len(states):
            bounds.append(len(states))
    return _assemble(features, states, actions, rewards, next_states, terminal, bounds, seed)


def _assemble(features, states, actions, rewards, next_states, terminal, bounds, seed) -> EpisodeBatch:
    terminal = np.asarray(terminal, dtype=bool)
    phi = features.batch(states)
    phi_next = features.batch(next_states)
    phi_next[terminal] = 0.0
    return EpisodeBatch(
        phi=phi,
        reward=np.asarray(rewards, dtype=float),
        phi_next=phi_next,
        phi_bar_next=phi_next.copy(),
        states=np.atleast_2d(np.asarray(states, dtype=float)).reshape(len(states), -1),
        actions=np.asarray(actions, dtype=np.int64),
        next_states=np.atleast_2d(np.asarray(next_states, dtype=float)).reshape(len(states), -1),
        terminal=terminal,
        episode_boundaries=np.asarray(bounds, dtype=np.int64),
        seed=seed,
    )


# --------------------------------------------------------------------------
# CSV round trip

def save_batch_csv(batch: EpisodeBatch, path) -> None:
    """Write one row per transition; feature vectors are not stored.

    Columns: ``episode, step, s0..sk, action, reward, ns0..nsk, terminal``.
    Floats use ``repr`` so values round-trip exactly.
    """
    k = batch.states.shape[1]
    header = ["episode", "step"] + [f"s{i}" for i in range(k)] + ["action", "reward"]
    header += [f"ns{i}" for i in range(k)] + ["terminal"]
    starts = batch.episode_starts()
    episode = np.cumsum(starts) - 1
    step = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(batch)):
            step = 0 if starts[i] else step + 1
            row = [int(episode[i]), step]
            row += [repr(float(x)) for x in batch.states[i]]
            row += [int(batch.actions[i]), repr(float(batch.reward[i]))]
            row += [repr(float(x)) for x in batch.next_states[i]]
            row += [int(bool(batch.terminal[i]))]
            w.writerow(row)


def load_batch_csv(path, features: FeatureMap, seed: int = 0, integer_states: bool | None = None) -> EpisodeBatch:
    """Read a file written by :func:`save_batch_csv`, recomputing features.

    ``integer_states`` defaults to ``True`` for table-backed feature maps.
    """
    if integer_states is None:
        integer_states = isinstance(features, TableFeatures)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    k = sum(1 for h in header if h.startswith("s") and h[1:].isdigit())
    states, actions, rewards, next_states, terminal, bounds = [], [], [], [], [], []
    prev_episode = None
    for i, row in enumerate(rows):
        ep = int(row[0])
        if prev_episode is not None and ep != prev_episode:
            bounds.append(i)
        prev_episode = ep
        s = [float(x) for x in row[2 : 2 + k]]
        ns = [float(x) for x in row[4 + k : 4 + 2 * k]]
        if integer_states:
            s, ns = int(s[0]), int(ns[0])
        states.append(s)
        actions.append(int(row[2 + k]))
        rewards.append(float(row[3 + k]))
        next_states.append(ns)
        terminal.append(bool(int(row[4 + 2 * k])))
    if rows:
        bounds.append(len(rows))
    batch = _assemble(features, states, actions, rewards, next_states, terminal, bounds, seed)
    return batch
