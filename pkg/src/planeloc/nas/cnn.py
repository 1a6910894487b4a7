"""Agent CNN backbones: the cell supernet (searchable or genotype-fixed) and a plain CNN."""
from __future__ import annotations

import torch
import torch.nn as nn

from .genotype import N_CNN_EDGES, N_NODES, cnn_edges
from .ops import CNN_OPS, FactorizedReduce, ReLUConvNorm, make_op

SHARED_LAYOUT = "NNRNRNNR"
UNIQUE_LAYOUT = "NNRN"


class ShapeMismatchError(ValueError):
    pass


class MixedEdge(nn.Module):
    """All candidate ops on one edge, with per-op execution counters."""

    def __init__(self, c: int, stride: int):
        super().__init__()
        self.ops = nn.ModuleList(make_op(name, c, stride) for name in CNN_OPS)
        self.calls = [0] * len(CNN_OPS)

    def forward(self, x, weights, index):
        if index is not None:
            self.calls[index] += 1
            return weights[index] * self.ops[index](x)
        out = 0
        for k, op in enumerate(self.ops):
            self.calls[k] += 1
            out = out + weights[k] * op(x)
        return out


class Cell(nn.Module):
    """Two inputs, four intermediate nodes, output = concat of the intermediates.

    With ``nodes`` given (a genotype cell), only the retained edges exist.
    """

    def __init__(self, c_pp, c_p, c, reduction, reduction_prev, nodes=None):
        super().__init__()
        self.reduction = reduction
        self.pre0 = FactorizedReduce(c_pp, c) if reduction_prev else ReLUConvNorm(c_pp, c, 1, 1, 0)
        self.pre1 = ReLUConvNorm(c_p, c, 1, 1, 0)
        self.searchable = nodes is None
        self.edges = nn.ModuleDict()
        if self.searchable:
            for i, j in cnn_edges():
                self.edges[f"{i}_{j}"] = MixedEdge(c, 2 if reduction and j < 2 else 1)
            self.inbound = [[j for (n, j) in cnn_edges() if n == i] for i in range(N_NODES)]
        else:
            self.inbound = []
            for i, pairs in enumerate(nodes):
                self.inbound.append([j for j, _ in pairs])
                for j, op in pairs:
                    self.edges[f"{i}_{j}"] = make_op(op, c, 2 if reduction and j < 2 else 1)
        self.out_channels = N_NODES * c

    def forward(self, s0, s1, edge_weights=None):
        states = [self.pre0(s0), self.pre1(s1)]
        e = 0
        for i in range(N_NODES):
            acc = 0
            for j in self.inbound[i]:
                edge = self.edges[f"{i}_{j}"]
                if self.searchable:
                    w, idx = edge_weights[e]
                    acc = acc + edge(states[j], w, idx)
                    e += 1
                else:
                    acc = acc + edge(states[j])
            states.append(acc)
        return torch.cat(states[2:], dim=1)


class CellBackbone(nn.Module):
    """Stem -> shared cells -> per-agent unique cells -> GAP -> per-agent head.

    Logit kinds: ``shared_normal``, ``shared_reduce`` and per agent ``agent{k}_normal``,
    ``agent{k}_reduce``. A genotype fixes every cell and removes the search edges.
    """

    def __init__(self, channels: int = 8, n_agents: int = 3, n_actions: int = 8, in_frames: int = 3,
                 shared_layout: str = SHARED_LAYOUT, unique_layout: str = UNIQUE_LAYOUT,
                 stem_stride: int = 1, genotype=None):
        super().__init__()
        self.n_agents, self.n_actions, self.in_frames = n_agents, n_actions, in_frames
        self.shared_layout, self.unique_layout = shared_layout, unique_layout
        self.stem = nn.Sequential(
            nn.Conv2d(in_frames, channels, 3, stride=stem_stride, padding=1, bias=False),
            nn.GroupNorm(1, channels, affine=False),
        )

        def build(layout, prefix, c_pp, c_p, c, red_prev):
            cells = nn.ModuleList()
            for ch in layout:
                red = ch == "R"
                if red:
                    c *= 2
                kind = f"{prefix}_{'reduce' if red else 'normal'}"
                nodes = genotype.cells[kind] if genotype is not None else None
                cell = Cell(c_pp, c_p, c, red, red_prev, nodes)
                cells.append(cell)
                c_pp, c_p, red_prev = c_p, cell.out_channels, red
            return cells, (c_pp, c_p, c, red_prev)

        self.shared, state = build(shared_layout, "shared", channels, channels, channels, False)
        self.unique = nn.ModuleList()
        for k in range(n_agents):
            cells, end = build(unique_layout, f"agent{k}", *state)
            self.unique.append(cells)
        self.heads = nn.ModuleList(nn.Linear(end[1], n_actions) for _ in range(n_agents))
        self.searchable = genotype is None

    def alpha_shapes(self) -> dict[str, tuple[int, int]]:
        if not self.searchable:
            return {}
        shapes = {}
        for prefix, layout in [("shared", self.shared_layout)] + [
                (f"agent{k}", self.unique_layout) for k in range(self.n_agents)]:
            for ch in sorted(set(layout)):
                shapes[f"{prefix}_{'reduce' if ch == 'R' else 'normal'}"] = (N_CNN_EDGES, len(CNN_OPS))
        return shapes

    def forward(self, obs: torch.Tensor, weights: dict | None = None) -> torch.Tensor:
        """obs (B, agents, frames, S, S) -> raw Q (B, agents, actions)."""
        if obs.ndim != 5 or obs.shape[1] != self.n_agents or obs.shape[2] != self.in_frames:
            raise ShapeMismatchError(f"expected (B, {self.n_agents}, {self.in_frames}, S, S), got {tuple(obs.shape)}")
        if self.searchable and weights is None:
            raise ValueError("searchable backbone needs resolved edge weights")
        b = obs.shape[0]
        x = self.stem(obs.reshape(b * self.n_agents, *obs.shape[2:]))

        def run(cells, prefix, s0, s1, layout):
            for cell, ch in zip(cells, layout):
                w = None
                if self.searchable:
                    w = weights[f"{prefix}_{'reduce' if ch == 'R' else 'normal'}"]
                s0, s1 = s1, cell(s0, s1, w)
            return s0, s1

        s0, s1 = run(self.shared, "shared", x, x, self.shared_layout)
        s0 = s0.reshape(b, self.n_agents, *s0.shape[1:])
        s1 = s1.reshape(b, self.n_agents, *s1.shape[1:])
        rows = []
        for k in range(self.n_agents):
            _, out = run(self.unique[k], f"agent{k}", s0[:, k], s1[:, k], self.unique_layout)
            rows.append(self.heads[k](out.mean(dim=(2, 3))))
        return torch.stack(rows, dim=1)


class PlainBackbone(nn.Module):
    """Hand-fixed CNN: shared strided conv trunk, per-agent conv + GAP + head."""

    def __init__(self, channels: int = 8, n_agents: int = 3, n_actions: int = 8, in_frames: int = 3,
                 stem_stride: int = 1):
        super().__init__()
        self.n_agents, self.in_frames = n_agents, in_frames
        c = channels
        self.trunk = nn.Sequential(
            nn.Conv2d(in_frames, c, 3, stride=stem_stride, padding=1), nn.ReLU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(4 * c, 8 * c, 3, stride=2, padding=1), nn.ReLU(),
        )
        self.unique = nn.ModuleList(
            nn.Sequential(nn.Conv2d(8 * c, 8 * c, 3, stride=2, padding=1), nn.ReLU()) for _ in range(n_agents))
        self.heads = nn.ModuleList(nn.Linear(8 * c, n_actions) for _ in range(n_agents))
        self.searchable = False

    def alpha_shapes(self) -> dict:
        return {}

    def forward(self, obs, weights=None):
        if obs.ndim != 5 or obs.shape[1] != self.n_agents or obs.shape[2] != self.in_frames:
            raise ShapeMismatchError(f"expected (B, {self.n_agents}, {self.in_frames}, S, S), got {tuple(obs.shape)}")
        b = obs.shape[0]
        x = self.trunk(obs.reshape(b * self.n_agents, *obs.shape[2:]))
        x = x.reshape(b, self.n_agents, *x.shape[1:])
        rows = [self.heads[k](self.unique[k](x[:, k]).mean(dim=(2, 3))) for k in range(self.n_agents)]
        return torch.stack(rows, dim=1)


def op_execution_counts(module: nn.Module) -> list[int]:
    """Total executions per candidate op over every mixed edge in ``module``."""
    total = [0] * len(CNN_OPS)
    for m in module.modules():
        if isinstance(m, MixedEdge):
            total = [a + b for a, b in zip(total, m.calls)]
    return total


def reset_op_counts(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, MixedEdge):
            m.calls = [0] * len(CNN_OPS)
