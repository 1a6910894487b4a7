"""Collaborative calibration: a bidirectional recurrent cell over the agent sequence."""
from __future__ import annotations

import torch
import torch.nn as nn

from .genotype import N_RNN_EDGES, N_RNN_NODES, RNN_KIND, rnn_edges
from .ops import RNN_OPS, rnn_op


class RecurrentCell(nn.Module):
    """n0 = tanh(W_x x + W_h h); n_i = op(W_e n_j) summed over inbound edges; h = mean(n1..n3)."""

    def __init__(self, dim: int = 8, nodes=None):
        super().__init__()
        self.w_x = nn.Linear(dim, dim)
        self.w_h = nn.Linear(dim, dim, bias=False)
        self.searchable = nodes is None
        self.edges = nn.ModuleDict()
        if self.searchable:
            for i, j in rnn_edges():
                self.edges[f"{i}_{j}"] = nn.Linear(dim, dim)
            self.inbound = [[(j, None) for (n, j) in rnn_edges() if n == i] for i in range(1, N_RNN_NODES + 1)]
        else:
            self.inbound = []
            for i, (j, op) in enumerate(nodes, start=1):
                self.edges[f"{i}_{j}"] = nn.Linear(dim, dim)
                self.inbound.append([(j, op)])

    def forward(self, x, h, edge_weights=None):
        states = [torch.tanh(self.w_x(x) + self.w_h(h))]
        e = 0
        for i, inbound in enumerate(self.inbound, start=1):
            acc = 0
            for j, op in inbound:
                z = self.edges[f"{i}_{j}"](states[j])
                if self.searchable:
                    w, idx = edge_weights[e]
                    e += 1
                    if idx is not None:
                        acc = acc + w[idx] * rnn_op(RNN_OPS[idx], z)
                    else:
                        acc = acc + sum(w[k] * rnn_op(name, z) for k, name in enumerate(RNN_OPS))
                else:
                    acc = acc + rnn_op(op, z)
            states.append(acc)
        return torch.stack(states[1:], dim=0).mean(dim=0)


class Calibrator(nn.Module):
    """Maps raw Q rows (B, agents, 8) to calibrated rows of the same shape.

    ``kind`` is ``searched`` (cell over the searched space, optionally fixed
    by a genotype) or ``lstm`` (a fixed BiLSTM). Directions are summed and
    passed through a linear map.
    """

    def __init__(self, kind: str = "searched", dim: int = 8, nodes=None):
        super().__init__()
        self.kind, self.dim = kind, dim
        if kind == "searched":
            self.fwd = RecurrentCell(dim, nodes)
            self.bwd = RecurrentCell(dim, nodes)
            self.searchable = nodes is None
        elif kind == "lstm":
            self.lstm = nn.LSTM(dim, dim, batch_first=True, bidirectional=True)
            self.searchable = False
        else:
            raise ValueError(f"unknown calibrator {kind!r}")
        self.out = nn.Linear(dim, dim)

    def alpha_shapes(self) -> dict:
        return {RNN_KIND: (N_RNN_EDGES, len(RNN_OPS))} if self.searchable else {}

    def forward(self, q: torch.Tensor, weights: dict | None = None) -> torch.Tensor:
        if self.kind == "lstm":
            y, _ = self.lstm(q)
            return self.out(y[..., :self.dim] + y[..., self.dim:])
        w = weights[RNN_KIND] if self.searchable else None
        n = q.shape[1]
        h = q.new_zeros(q.shape[0], self.dim)
        hf = []
        for t in range(n):
            h = self.fwd(q[:, t], h, w)
            hf.append(h)
        h = q.new_zeros(q.shape[0], self.dim)
        hb = [None] * n
        for t in reversed(range(n)):
            h = self.bwd(q[:, t], h, w)
            hb[t] = h
        return self.out(torch.stack([a + b for a, b in zip(hf, hb)], dim=1))
