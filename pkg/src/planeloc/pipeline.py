"""Dataset splitting and policy evaluation shared by the CLI and the benchmark."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import N_ACTIONS, N_AGENTS, PlaneEnv
from .eval import MetricsReport, aggregate, evaluate_case
from .phantom import PhantomCase, align_case, load_dataset
from .qlearn import TrainerConfig, case_rng, greedy_rollouts


class MissingPrerequisiteError(RuntimeError):
    pass


@dataclass
class Splits:
    train: list[PhantomCase]
    val: list[PhantomCase]
    test: list[PhantomCase]

    def get(self, name: str) -> list[PhantomCase]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def split_cases(cases: Sequence[PhantomCase], n_train: int, n_val: int, n_test: int,
                align: bool = True) -> Splits:
    """Consecutive train / val / test split, optionally landmark-aligned to the atlas."""
    need = n_train + n_val + n_test
    if len(cases) < need:
        raise MissingPrerequisiteError(f"dataset has {len(cases)} cases, config needs {need}")
    cases = [align_case(c) if align else c for c in cases[:need]]
    return Splits(cases[:n_train], cases[n_train:n_train + n_val], cases[n_train + n_val:need])


def load_splits(directory, n_train: int, n_val: int, n_test: int, align: bool = True) -> Splits:
    directory = Path(directory)
    if not directory.is_dir() or not any(directory.glob("case_*")):
        raise MissingPrerequisiteError(f"no dataset at {directory}; run gen-data first")
    return split_cases(load_dataset(directory), n_train, n_val, n_test, align)


@dataclass
class PolicyEvaluation:
    report: MetricsReport
    rewards: np.ndarray       # per case accumulated reward
    sad: np.ndarray           # per case mean final SAD over planes
    init_sad: np.ndarray

    @property
    def accumulated_reward(self) -> float:
        return float(self.rewards.mean())

    @property
    def mean_sad(self) -> float:
        return float(self.sad.mean())


def _finish(label, cases, results, cfg) -> PolicyEvaluation:
    records = [evaluate_case(r["planes"], c, cfg.obs_size) for r, c in zip(results, cases)]
    return PolicyEvaluation(aggregate(records, label),
                            np.array([r["reward"] for r in results]),
                            np.array([np.mean(r["sad"]) for r in results]),
                            np.array([np.mean(r["init_sad"]) for r in results]))


def evaluate_network(net, cases, cfg: TrainerConfig, split: str = "test", label: str = "") -> PolicyEvaluation:
    return _finish(label, cases, greedy_rollouts(net, cases, cfg, split), cfg)


def evaluate_random(cases, cfg: TrainerConfig, split: str = "test", label: str = "Random") -> PolicyEvaluation:
    """Uniform-random actions from the same per-case initial states as the networks."""
    rng = np.random.default_rng([cfg.seed, 4242])
    results = []
    for i, c in enumerate(cases):
        env = PlaneEnv(c, cfg.obs_size, cfg.step_sizes, cfg.horizon_test)
        state = env.reset(cfg.init_range, case_rng(cfg.seed, split, i))
        init = env.sad(state.planes)
        total = 0.0
        for _ in range(cfg.horizon_test):
            state, r, _ = env.step(state, rng.integers(0, N_ACTIONS, size=N_AGENTS))
            total += r.sum()
        results.append(dict(reward=total, planes=state.planes, sad=env.sad(state.planes), init_sad=init))
    return _finish(label, cases, results, cfg)
