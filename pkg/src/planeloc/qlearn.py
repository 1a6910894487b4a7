"""Double-DQN training and architecture search loops.

The three agents act on their own planes; their raw Q rows are optionally
calibrated by the recurrent module before action selection and in the
loss. Targets follow double DQN: the online network picks the next action,
the target network values it.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .env import N_ACTIONS, N_AGENTS, UTERUS_STEPS, PlaneEnv, Transition, stack_frames
from .nas import Genotype, QNetwork, build_qnetwork, derive_genotype, select_architecture
from .phantom import PhantomCase
from .replay import InsufficientDataError, ReplayBuffer


@dataclass
class TrainerConfig:
    lr_weights: float = 5e-5
    lr_arch: float = 0.05
    gamma: float = 0.9
    batch: int = 32
    buffer_capacity: int = 15000
    target_sync_every: int = 1500
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.5
    horizon_train: int = 50
    horizon_test: int = 30
    search_epochs: int = 20
    train_epochs: int = 40
    tau_start: float = 10.0
    tau_end: float = 0.1
    is_beta_start: float = 0.4
    is_beta_end: float = 1.0
    train_every: int = 1
    n_envs: int = 8
    grad_clip: float = 10.0
    arch_weight_decay: float = 1e-3
    init_angle: float = 20.0
    init_dist: float = 4.0
    step_sizes: tuple = UTERUS_STEPS
    obs_size: int = 64
    channels: int = 8
    stem_stride: int = 1
    shared_layout: str = "NNRNRNNR"
    unique_layout: str = "NNRN"
    backbone: str = "searched"
    rnn: str = "searched"
    sampler: str = "gdas"
    seed: int = 0

    def __post_init__(self):
        self.step_sizes = tuple(float(s) for s in self.step_sizes)
        self.validate()

    def validate(self) -> "TrainerConfig":
        pos = ["lr_weights", "lr_arch", "batch", "buffer_capacity", "target_sync_every", "horizon_train",
               "horizon_test", "tau_start", "tau_end", "train_every", "n_envs", "obs_size", "channels",
               "stem_stride"]
        for name in pos:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ["search_epochs", "train_epochs", "init_angle", "init_dist", "grad_clip", "arch_weight_decay"]:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        for name in ["eps_start", "eps_end", "eps_decay_fraction", "is_beta_start", "is_beta_end"]:
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if len(self.step_sizes) != 4 or min(self.step_sizes) <= 0:
            raise ValueError("step_sizes needs 4 positive values")
        if self.backbone not in ("searched", "fixed"):
            raise ValueError("backbone must be searched|fixed")
        if self.rnn not in ("none", "fixed", "searched"):
            raise ValueError("rnn must be none|fixed|searched")
        if self.sampler not in ("gdas", "darts"):
            raise ValueError("sampler must be gdas|darts")
        return self

    @property
    def init_range(self) -> tuple[float, float]:
        return (self.init_angle, self.init_dist)

    def replace(self, **kw) -> "TrainerConfig":
        return dataclasses.replace(self, **kw)


# -- schedules -------------------------------------------------------------

def linear(start: float, end: float, frac: float) -> float:
    return start + (end - start) * min(max(frac, 0.0), 1.0)


def epsilon_at(cfg: TrainerConfig, step: int, total_steps: int) -> float:
    span = max(1.0, cfg.eps_decay_fraction * total_steps)
    return linear(cfg.eps_start, cfg.eps_end, step / span)


def tau_at(cfg: TrainerConfig, epoch: int, epochs: int) -> float:
    return linear(cfg.tau_start, cfg.tau_end, epoch / max(1, epochs - 1))


# -- core pieces -----------------------------------------------------------

def calibrate(q: torch.Tensor, net: QNetwork, weights: dict | None = None) -> torch.Tensor:
    """Apply the network's recurrent module to raw Q rows (identity without one)."""
    if net.calibrator is None:
        return q
    squeeze = q.ndim == 2
    out = net.calibrator(q.unsqueeze(0) if squeeze else q, weights)
    return out[0] if squeeze else out


def select_actions(q: np.ndarray, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Per-row epsilon-greedy; ties go to the lowest index."""
    q = np.asarray(q)
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must lie in [0, 1]")
    greedy = np.argmax(q, axis=-1)
    explore = rng.random(greedy.shape) < eps
    rand = rng.integers(0, q.shape[-1], size=greedy.shape)
    return np.where(explore, rand, greedy)


def batch_tensors(transitions: Sequence[Transition]):
    obs = torch.from_numpy(np.stack([stack_frames(t.obs) for t in transitions]))
    nxt = torch.from_numpy(np.stack([stack_frames(t.next_obs) for t in transitions]))
    act = torch.from_numpy(np.stack([t.actions for t in transitions]))
    rew = torch.from_numpy(np.stack([t.rewards for t in transitions]).astype(np.float32))
    return obs, act, rew, nxt


def target_mode(sampler: str) -> str:
    """Noise-free resolution used for target and evaluation forwards."""
    return "darts" if sampler == "darts" else "argmax"


def ddqn_targets(batch, online: QNetwork, target: QNetwork, gamma: float, online_weights=None,
                 mode: str = "argmax") -> torch.Tensor:
    """q* = r + gamma * Q'_target(s')[argmax_a Q'_online(s', a)], per agent (B, 3)."""
    if isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], Transition):
        _, _, rew, nxt = batch_tensors(batch)
    else:
        _, _, rew, nxt = batch
    with torch.no_grad():
        q_online, _ = online(nxt, mode=mode, weights=online_weights)
        a_next = torch.argmax(q_online, dim=-1, keepdim=True)
        q_target, _ = target(nxt, mode=mode)
        return rew + gamma * q_target.gather(-1, a_next).squeeze(-1)


def td_loss(q_sa: torch.Tensor, q_star: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Importance-weighted squared TD error, summed over agents, mean over batch."""
    return (weights[:, None] * (q_star - q_sa) ** 2).sum(dim=1).mean()


@dataclass
class Learner:
    """Online/target pair with the two optimizers."""

    online: QNetwork
    target: QNetwork
    cfg: TrainerConfig
    opt_w: torch.optim.Optimizer = field(init=False)
    opt_a: torch.optim.Optimizer | None = field(init=False)

    def __post_init__(self):
        self.opt_w = torch.optim.Adam(self.online.weight_parameters(), lr=self.cfg.lr_weights)
        arch = self.online.arch_parameters()
        self.opt_a = (torch.optim.Adam(arch, lr=self.cfg.lr_arch, betas=(0.5, 0.999),
                                       weight_decay=self.cfg.arch_weight_decay) if arch else None)

    @classmethod
    def create(cls, cfg: TrainerConfig, genotype: Genotype | None = None) -> "Learner":
        net = build_qnetwork(cfg.backbone, cfg.rnn, genotype, cfg.channels, cfg.shared_layout,
                             cfg.unique_layout, cfg.stem_stride, cfg.seed)
        tgt = copy.deepcopy(net)
        for p in tgt.parameters():
            p.requires_grad_(False)
        return cls(net, tgt, cfg)


def sync_target(online: QNetwork, target: QNetwork, step: int, every: int = 1500) -> bool:
    if step % every:
        return False
    with torch.no_grad():
        for (_, pt), (_, po) in zip(target.state_dict().items(), online.state_dict().items()):
            pt.copy_(po)
    return True


def train_step(buffer: ReplayBuffer, learner: Learner, mode: str, rng: np.random.Generator,
               tau: float = 1.0, generator: torch.Generator | None = None) -> float:
    """One gradient step on the weights (prioritized batch) or the logits (uniform batch)."""
    cfg, net = learner.cfg, learner.online
    if len(buffer) < cfg.batch:
        raise InsufficientDataError(f"buffer holds {len(buffer)} < batch {cfg.batch}")
    if mode == "weights":
        trans, w, idx = buffer.sample(cfg.batch, "prioritized", rng)
        opt = learner.opt_w
    elif mode == "arch":
        if learner.opt_a is None:
            raise ValueError("network has no architecture parameters")
        trans, w, idx = buffer.sample(cfg.batch, "uniform", rng)
        opt = learner.opt_a
    else:
        raise ValueError(f"unknown train mode {mode!r}")
    obs, act, rew, nxt = batch_tensors(trans)
    sampler = "gdas" if cfg.sampler == "gdas" else "darts"
    weights = net.resolve(sampler, tau, generator)
    q_star = ddqn_targets((obs, act, rew, nxt), net, learner.target, cfg.gamma,
                          online_weights=_detached(weights), mode=target_mode(cfg.sampler))
    q, _ = net(obs, weights=weights)
    q_sa = q.gather(-1, act.unsqueeze(-1)).squeeze(-1)
    loss = td_loss(q_sa, q_star, torch.as_tensor(w, dtype=q.dtype))
    params = net.weight_parameters() if mode == "weights" else net.arch_parameters()
    for p in params:
        p.grad = None
    loss.backward(inputs=params)
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    opt.step()
    if mode == "weights":
        err = (q_star - q_sa.detach()).abs().mean(dim=1).numpy()
        buffer.update_priorities(idx, err)
    return float(loss.detach())


def _detached(weights):
    if weights is None:
        return None
    return {k: [(w.detach(), i) for w, i in v] for k, v in weights.items()}


# -- rollouts --------------------------------------------------------------

def case_rng(seed: int, split: str, index: int) -> np.random.Generator:
    """Per-case initialization stream, shared by every policy under comparison."""
    code = {"train": 0, "val": 1, "test": 2}[split]
    return np.random.default_rng([int(seed), code, int(index), 2718])


def greedy_rollouts(net: QNetwork, cases: Sequence[PhantomCase], cfg: TrainerConfig, split: str = "val",
                    seed: int | None = None, mode: str | None = None) -> list[dict]:
    """Noise-free greedy episodes (horizon_test), all cases in lockstep."""
    seed = cfg.seed if seed is None else seed
    mode = mode or target_mode(cfg.sampler)
    envs = [PlaneEnv(c, cfg.obs_size, cfg.step_sizes, cfg.horizon_test) for c in cases]
    states = [e.reset(cfg.init_range, case_rng(seed, split, i)) for i, e in enumerate(envs)]
    init_sad = [e.sad(s.planes) for e, s in zip(envs, states)]
    totals = np.zeros(len(envs))
    with torch.no_grad():
        weights = net.resolve(mode)
        for _ in range(cfg.horizon_test):
            obs = torch.from_numpy(np.stack([s.observation for s in states]))
            q, _ = net(obs, weights=weights)
            acts = torch.argmax(q, dim=-1).numpy()
            for k, (e, s) in enumerate(zip(envs, states)):
                states[k], r, _ = e.step(s, acts[k])
                totals[k] += r.sum()
    return [dict(reward=float(totals[k]), planes=states[k].planes, sad=envs[k].sad(states[k].planes),
                 init_sad=init_sad[k]) for k in range(len(envs))]


@dataclass
class EpochLog:
    epoch: int
    accumulated_reward: float
    mean_sad: float
    loss: float
    epsilon: float
    tau: float


def write_curves(path, logs: Sequence[EpochLog]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "accumulated_reward", "mean_SAD", "loss", "epsilon", "tau"])
        for l in logs:
            w.writerow([l.epoch, repr(l.accumulated_reward), repr(l.mean_sad), repr(l.loss),
                        repr(l.epsilon), repr(l.tau)])


def read_curves(path) -> list[EpochLog]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [EpochLog(int(r["epoch"]), float(r["accumulated_reward"]), float(r["mean_SAD"]), float(r["loss"]),
                     float(r["epsilon"]), float(r["tau"])) for r in rows]


def _run(learner: Learner, train_cases, val_cases, cfg: TrainerConfig, epochs: int, search: bool, log=None):
    rng = np.random.default_rng([cfg.seed, 31337])
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    buffer = ReplayBuffer(cfg.buffer_capacity, is_beta=cfg.is_beta_start)
    total = epochs * len(train_cases) * cfg.horizon_train
    sampler = cfg.sampler if learner.online.searchable else "argmax"
    step, logs, snapshots = 0, [], []
    for epoch in range(epochs):
        tau = tau_at(cfg, epoch, epochs) if search else float("nan")
        losses = []
        order = rng.permutation(len(train_cases))
        for start in range(0, len(order), cfg.n_envs):
            chunk = order[start:start + cfg.n_envs]
            envs = [PlaneEnv(train_cases[i], cfg.obs_size, cfg.step_sizes, cfg.horizon_train) for i in chunk]
            states = [e.reset(cfg.init_range, rng) for e in envs]
            for _ in range(cfg.horizon_train):
                eps = epsilon_at(cfg, step, total)
                with torch.no_grad():
                    obs = torch.from_numpy(np.stack([s.observation for s in states]))
                    q, _ = learner.online(obs, mode=sampler, tau=tau if search else 1.0, generator=gen)
                acts = select_actions(q.numpy(), eps, rng)
                for k, e in enumerate(envs):
                    nxt, r, _ = e.step(states[k], acts[k])
                    buffer.push(Transition(states[k].frames(), acts[k], r, nxt.frames()))
                    states[k] = nxt
                    step += 1
                    buffer.is_beta = linear(cfg.is_beta_start, cfg.is_beta_end, step / total)
                    if step % cfg.train_every == 0 and len(buffer) >= cfg.batch:
                        losses.append(train_step(buffer, learner, "weights", rng, tau, gen))
                        if search:
                            train_step(buffer, learner, "arch", rng, tau, gen)
                    sync_target(learner.online, learner.target, step, cfg.target_sync_every)
        val = greedy_rollouts(learner.online, val_cases, cfg, "val")
        entry = EpochLog(epoch, float(np.mean([v["reward"] for v in val])),
                         float(np.mean([v["sad"].mean() for v in val])),
                         float(np.mean(losses)) if losses else float("nan"),
                         epsilon_at(cfg, step, total), tau)
        logs.append(entry)
        if search:
            snapshots.append(learner.online.alpha.as_numpy())
        if log is not None:
            log(entry)
    return logs, snapshots


@dataclass
class SearchResult:
    alpha: dict
    epoch: int
    history: list[float]
    logs: list[EpochLog]
    genotype: Genotype
    snapshots: list[dict]


def run_search(train_cases, val_cases, cfg: TrainerConfig, sampler: str | None = None, log=None) -> SearchResult:
    """Alternate weight and logit updates; keep the logits of the best validation epoch."""
    if sampler is not None:
        cfg = cfg.replace(sampler=sampler)
    if cfg.backbone != "searched" and cfg.rnn != "searched":
        raise ValueError("nothing to search: backbone and rnn are both fixed")
    learner = Learner.create(cfg)
    logs, snaps = _run(learner, train_cases, val_cases, cfg, cfg.search_epochs, True, log)
    history = [l.accumulated_reward for l in logs]
    alpha, epoch = select_architecture(history, snaps)
    return SearchResult(alpha, epoch, history, logs, derive_genotype(alpha), snaps)


@dataclass
class TrainResult:
    learner: Learner
    logs: list[EpochLog]
    genotype: Genotype | None

    @property
    def net(self) -> QNetwork:
        return self.learner.online


def run_train(train_cases, val_cases, genotype: Genotype | None, cfg: TrainerConfig, log=None) -> TrainResult:
    """Retrain a fixed architecture from scratch."""
    if cfg.backbone == "searched" and (genotype is None or not genotype.cells):
        raise ValueError("searched backbone requires a genotype with CNN cells")
    if cfg.rnn == "searched" and (genotype is None or genotype.rnn is None):
        raise ValueError("searched rnn requires a genotype with an rnn cell")
    learner = Learner.create(cfg, genotype)
    logs, _ = _run(learner, train_cases, val_cases, cfg, cfg.train_epochs, False, log)
    return TrainResult(learner, logs, genotype)


# -- checkpoints -----------------------------------------------------------

def config_echo(cfg: TrainerConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


def save_network(directory, net: QNetwork, genotype: Genotype | None, cfg: TrainerConfig) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    with open(directory / "weights.npy", "wb") as fh:
        for k in sorted(state):
            np.save(fh, state[k], allow_pickle=False)
    manifest = ["format planeloc-weights", "version 1"]
    manifest += [f"tensor {k} {' '.join(str(s) for s in state[k].shape)}".rstrip() for k in sorted(state)]
    (directory / "weights.manifest").write_text("\n".join(manifest) + "\n")
    if genotype is not None:
        genotype.save(directory / "genotype.txt")
    (directory / "config.txt").write_text(config_echo(cfg))


def load_network(directory, cfg: TrainerConfig) -> QNetwork:
    directory = Path(directory)
    gpath = directory / "genotype.txt"
    genotype = Genotype.load(gpath) if gpath.exists() else None
    net = build_qnetwork(cfg.backbone, cfg.rnn, genotype, cfg.channels, cfg.shared_layout,
                         cfg.unique_layout, cfg.stem_stride, cfg.seed)
    names = [l.split()[1] for l in (directory / "weights.manifest").read_text().splitlines()
             if l.startswith("tensor ")]
    state = {}
    with open(directory / "weights.npy", "rb") as fh:
        for k in names:
            state[k] = torch.from_numpy(np.load(fh, allow_pickle=False))
    net.load_state_dict(state)
    return net
