"""Discrete architectures derived from logits, their text form and selection."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ops import CNN_OPS, RNN_OPS

N_NODES = 4          # intermediate nodes per CNN cell
N_RNN_NODES = 3      # n1..n3 (n0 is fixed)
RNN_KIND = "rnn"


def cnn_edges() -> list[tuple[int, int]]:
    """(node, predecessor) in logit-row order; predecessors 0, 1 are the cell inputs."""
    return [(i, j) for i in range(N_NODES) for j in range(2 + i)]


def rnn_edges() -> list[tuple[int, int]]:
    """(node, predecessor) for n1..n3 over n0..n_{i-1}."""
    return [(i, j) for i in range(1, N_RNN_NODES + 1) for j in range(i)]


N_CNN_EDGES = len(cnn_edges())   # 14
N_RNN_EDGES = len(rnn_edges())   # 6


class EmptyHistoryError(ValueError):
    pass


@dataclass
class Genotype:
    cells: dict[str, list[list[tuple[int, str]]]] = field(default_factory=dict)
    rnn: list[tuple[int, str]] | None = None

    def validate(self) -> None:
        for kind, nodes in self.cells.items():
            if len(nodes) != N_NODES:
                raise ValueError(f"{kind}: expected {N_NODES} nodes")
            for i, pairs in enumerate(nodes):
                if len(pairs) != 2 or pairs[0][0] == pairs[1][0]:
                    raise ValueError(f"{kind} node {i}: need 2 distinct predecessors")
                for pred, op in pairs:
                    if not 0 <= pred < 2 + i or op not in CNN_OPS or op == "none":
                        raise ValueError(f"{kind} node {i}: bad edge ({pred}, {op})")
        if self.rnn is not None:
            if len(self.rnn) != N_RNN_NODES:
                raise ValueError("rnn genotype needs 3 nodes")
            for i, (pred, op) in enumerate(self.rnn, start=1):
                if not 0 <= pred < i or op not in RNN_OPS or op == "none":
                    raise ValueError(f"rnn node {i}: bad edge ({pred}, {op})")

    def to_text(self) -> str:
        lines = []
        for kind, nodes in self.cells.items():
            for i, pairs in enumerate(nodes):
                (p1, o1), (p2, o2) = pairs
                lines.append(f"{kind} {i} {p1} {o1} {p2} {o2}")
        if self.rnn is not None:
            for i, (p, o) in enumerate(self.rnn, start=1):
                lines.append(f"{RNN_KIND} {i} {p} {o}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Genotype":
        cells: dict[str, dict[int, list]] = {}
        rnn: dict[int, tuple[int, str]] = {}
        for line in text.splitlines():
            tok = line.split()
            if not tok:
                continue
            if tok[0] == RNN_KIND:
                rnn[int(tok[1])] = (int(tok[2]), tok[3])
            else:
                cells.setdefault(tok[0], {})[int(tok[1])] = [(int(tok[2]), tok[3]), (int(tok[4]), tok[5])]
        g = cls({k: [v[i] for i in sorted(v)] for k, v in cells.items()},
                [rnn[i] for i in sorted(rnn)] if rnn else None)
        g.validate()
        return g

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "Genotype":
        return cls.from_text(Path(path).read_text())


def _softmax(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - a.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _cnn_cell(logits: np.ndarray) -> list[list[tuple[int, str]]]:
    w = _softmax(np.asarray(logits, dtype=np.float64))
    w[:, CNN_OPS.index("none")] = -np.inf
    nodes, e = [], 0
    for i in range(N_NODES):
        cand = []
        for j in range(2 + i):
            op = int(np.argmax(w[e]))
            cand.append((w[e, op], j, CNN_OPS[op]))
            e += 1
        # highest score first; stable on ties so the lower predecessor wins
        cand.sort(key=lambda c: -c[0])
        nodes.append([(j, op) for _, j, op in sorted(cand[:2], key=lambda c: c[1])])
    return nodes


def _rnn_cell(logits: np.ndarray) -> list[tuple[int, str]]:
    w = _softmax(np.asarray(logits, dtype=np.float64))
    w[:, RNN_OPS.index("none")] = -np.inf
    out, e = [], 0
    for i in range(1, N_RNN_NODES + 1):
        block = w[e:e + i]
        j, op = np.unravel_index(int(np.argmax(block)), block.shape)
        out.append((int(j), RNN_OPS[int(op)]))
        e += i
    return out


def derive_genotype(alpha: dict) -> Genotype:
    """Discretize logits: top-2 edges per CNN node, best single edge per RNN node.

    An edge's score is its largest softmax weight among non-none ops.
    """
    alpha = {k: (v.detach().cpu().numpy() if hasattr(v, "detach") else np.asarray(v)) for k, v in alpha.items()}
    cells = {k: _cnn_cell(v) for k, v in alpha.items() if k != RNN_KIND}
    rnn = _rnn_cell(alpha[RNN_KIND]) if RNN_KIND in alpha else None
    return Genotype(cells, rnn)


def select_architecture(history, snapshots=None):
    """Snapshot at the best validation epoch (1-based; ties -> earliest)."""
    history = list(history)
    if not history:
        raise EmptyHistoryError("no validation history")
    best = int(np.argmax(np.asarray(history, dtype=np.float64)))
    snap = snapshots[best] if snapshots is not None else None
    return snap, best + 1


# -- logit checkpoints -----------------------------------------------------

ALPHA_FORMAT = "planeloc-alpha"
ALPHA_VERSION = 1


def save_alpha(directory, alpha: dict, epoch: int | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in alpha.items()}
    with open(directory / "alpha.npy", "wb") as fh:
        for k in sorted(arrays):
            np.save(fh, arrays[k], allow_pickle=False)
    lines = [f"format {ALPHA_FORMAT}", f"version {ALPHA_VERSION}"]
    if epoch is not None:
        lines.append(f"epoch {epoch}")
    lines += [f"kind {k} {arrays[k].shape[0]} {arrays[k].shape[1]}" for k in sorted(arrays)]
    (directory / "alpha.manifest").write_text("\n".join(lines) + "\n")


def load_alpha(directory) -> tuple[dict, int | None]:
    directory = Path(directory)
    kinds, epoch, meta = [], None, {}
    for line in (directory / "alpha.manifest").read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "kind":
            kinds.append((tok[1], (int(tok[2]), int(tok[3]))))
        elif tok[0] == "epoch":
            epoch = int(tok[1])
        else:
            meta[tok[0]] = tok[1]
    if meta.get("format") != ALPHA_FORMAT or int(meta.get("version", -1)) != ALPHA_VERSION:
        raise ValueError(f"unsupported alpha checkpoint {meta}")
    out = {}
    with open(directory / "alpha.npy", "rb") as fh:
        for k, shape in kinds:
            a = np.load(fh, allow_pickle=False)
            if a.shape != shape:
                raise ValueError(f"alpha {k}: shape {a.shape} != manifest {shape}")
            out[k] = a
    return out, epoch
