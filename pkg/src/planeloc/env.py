"""Multi-agent plane-localization environment.

Each of the three agents owns one plane, stored as its raw parameter
vector ``(zeta, beta, phi, d)``. An action nudges one parameter by a fixed
step; the plane is rebuilt (and renormalized) from the raw vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import (Plane, angles_from_normal, dihedral_angle, half_diagonal, origin_distance_diff,
                       param_distance, plane_from_params, slice_volume)
from .phantom import PhantomCase

N_AGENTS = 3
N_ACTIONS = 8
HISTORY = 3
ACTION_NAMES = ("+zeta", "-zeta", "+beta", "-beta", "+phi", "-phi", "+d", "-d")

# (parameter index, sign) for each ActionId
_ACTION_TABLE = np.array([[0, 1], [0, -1], [1, 1], [1, -1], [2, 1], [2, -1], [3, 1], [3, -1]])

UTERUS_STEPS = (0.5, 0.5, 0.5, 0.1)
FETAL_BRAIN_STEPS = (1.0, 1.0, 1.0, 0.1)


def inverse_action(a: int) -> int:
    return a ^ 1


def action_delta(a: int, step_sizes: Sequence[float]) -> np.ndarray:
    if not 0 <= a < N_ACTIONS:
        raise ValueError(f"action {a} outside [0, 7]")
    idx, sign = _ACTION_TABLE[a]
    delta = np.zeros(4)
    delta[idx] = sign * step_sizes[idx]
    return delta


@dataclass
class MultiAgentState:
    params: np.ndarray                      # (3, 4) raw plane parameters
    plane_history: list[list[Plane]]        # per agent, current first
    slices: list[list[np.ndarray]]          # per agent, parallel to plane_history
    step: int
    case: PhantomCase = field(repr=False)

    @property
    def planes(self) -> list[Plane]:
        return [h[0] for h in self.plane_history]

    @property
    def observation(self) -> np.ndarray:
        """(agents, history, S, S) float32 stack."""
        return np.stack([np.stack(s) for s in self.slices])

    def frames(self) -> tuple:
        """Observation as nested tuples of shared slice arrays (no copy)."""
        return tuple(tuple(s) for s in self.slices)


@dataclass
class Transition:
    obs: tuple
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: tuple
    priority: float = 1.0

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float32)


def stack_frames(frames) -> np.ndarray:
    return np.stack([np.stack(agent) for agent in frames])


class PlaneEnv:
    """Environment over one phantom case."""

    def __init__(self, case: PhantomCase, size: int = 64,
                 step_sizes: Sequence[float] = UTERUS_STEPS, horizon: int = 50):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.case = case
        self.size = int(size)
        self.step_sizes = tuple(float(s) for s in step_sizes)
        self.horizon = int(horizon)
        self.d_norm = half_diagonal(case.volume.shape)
        self.gt = list(case.gt_planes)
        self.gt_params = np.array([np.append(angles_from_normal(p.normal), p.d) for p in self.gt])

    def _slice(self, plane: Plane) -> np.ndarray:
        return slice_volume(self.case.volume, plane, self.size).pixels

    def distance(self, k: int, plane: Plane) -> float:
        return param_distance(plane, self.gt[k], self.d_norm)

    def reset(self, init_range: tuple[float, float], rng: np.random.Generator) -> MultiAgentState:
        """Start every agent at its gt plane perturbed uniformly within +-init_range."""
        ang, dist = init_range
        offsets = np.concatenate([rng.uniform(-ang, ang, size=(N_AGENTS, 3)),
                                  rng.uniform(-dist, dist, size=(N_AGENTS, 1))], axis=1)
        return self.reset_to(self.gt_params + offsets)

    def reset_to(self, params) -> MultiAgentState:
        params = np.array(params, dtype=np.float64).reshape(N_AGENTS, 4)
        planes = [plane_from_params(*p) for p in params]
        hist, slices = [], []
        for pl in planes:
            img = self._slice(pl)
            hist.append([pl] * HISTORY)
            slices.append([img] * HISTORY)
        return MultiAgentState(params, hist, slices, 0, self.case)

    def step(self, state: MultiAgentState, actions) -> tuple[MultiAgentState, np.ndarray, bool]:
        if state.step >= self.horizon:
            raise RuntimeError("episode already finished")
        actions = [int(a) for a in actions]
        params = state.params.copy()
        rewards = np.zeros(N_AGENTS)
        hist, slices = [], []
        for k, a in enumerate(actions):
            params[k] += action_delta(a, self.step_sizes)
            old = state.plane_history[k][0]
            new = plane_from_params(*params[k])
            rewards[k] = np.sign(self.distance(k, old) - self.distance(k, new))
            hist.append([new] + state.plane_history[k][:HISTORY - 1])
            slices.append([self._slice(new)] + state.slices[k][:HISTORY - 1])
        nxt = MultiAgentState(params, hist, slices, state.step + 1, self.case)
        return nxt, rewards, nxt.step == self.horizon

    def sad(self, planes: Sequence[Plane]) -> np.ndarray:
        return np.array([dihedral_angle(p, g) + origin_distance_diff(p, g) for p, g in zip(planes, self.gt)])

    def distances(self, planes: Sequence[Plane]) -> np.ndarray:
        return np.array([self.distance(k, p) for k, p in enumerate(planes)])


# step with explicit step sizes, mirroring the functional form of the API
def step(env: PlaneEnv, state: MultiAgentState, actions, step_sizes=None):
    if step_sizes is not None and tuple(step_sizes) != env.step_sizes:
        env = PlaneEnv(env.case, env.size, step_sizes, env.horizon)
    return env.step(state, actions)


@dataclass
class Trajectory:
    actions: np.ndarray     # (T, 3)
    rewards: np.ndarray     # (T, 3)
    distances: np.ndarray   # (T + 1, 3) param distance, initial state first
    sad: np.ndarray         # (T + 1, 3)
    final_planes: list[Plane]
    transitions: list[Transition] = field(default_factory=list, repr=False)

    @property
    def accumulated_reward(self) -> float:
        return float(self.rewards.sum())

    def dump(self, path) -> None:
        """One text line per step: step, actions, rewards, D and SAD per agent."""
        lines = ["step a1 a2 a3 r1 r2 r3 D1 D2 D3 SAD1 SAD2 SAD3"]
        for t in range(len(self.sad)):
            a = self.actions[t - 1] if t else [-1] * N_AGENTS
            r = self.rewards[t - 1] if t else [0] * N_AGENTS
            vals = [str(t)] + [str(int(x)) for x in a] + [f"{x:g}" for x in r]
            vals += [f"{x:.9g}" for x in self.distances[t]] + [f"{x:.9g}" for x in self.sad[t]]
            lines.append(" ".join(vals))
        Path(path).write_text("\n".join(lines) + "\n")


Policy = Callable[[MultiAgentState], Sequence[int]]


def rollout(policy: Policy, env: PlaneEnv, horizon: int | None = None, rng=None,
            init_range=(20.0, 4.0), state: MultiAgentState | None = None,
            keep_transitions: bool = False) -> Trajectory:
    """Run exactly ``horizon`` joint steps and return the trajectory."""
    horizon = env.horizon if horizon is None else int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if horizon != env.horizon:
        env = PlaneEnv(env.case, env.size, env.step_sizes, horizon)
    if state is None:
        state = env.reset(init_range, rng if rng is not None else np.random.default_rng())
    acts, rews, trans = [], [], []
    dists = [env.distances(state.planes)]
    sads = [env.sad(state.planes)]
    for _ in range(horizon):
        a = np.asarray(policy(state), dtype=np.int64)
        nxt, r, _ = env.step(state, a)
        if keep_transitions:
            trans.append(Transition(state.frames(), a, r, nxt.frames()))
        acts.append(a)
        rews.append(r)
        dists.append(env.distances(nxt.planes))
        sads.append(env.sad(nxt.planes))
        state = nxt
    return Trajectory(np.array(acts), np.array(rews), np.array(dists), np.array(sads),
                      state.planes, trans)


def random_policy(rng: np.random.Generator) -> Policy:
    return lambda state: rng.integers(0, N_ACTIONS, size=N_AGENTS)


def greedy_oracle_policy(env: PlaneEnv) -> Policy:
    """Per agent, the action with the smallest look-ahead param distance."""
    def policy(state):
        out = []
        for k in range(N_AGENTS):
            ds = [env.distance(k, plane_from_params(*(state.params[k] + action_delta(a, env.step_sizes))))
                  for a in range(N_ACTIONS)]
            out.append(int(np.argmin(ds)))
        return out
    return policy
