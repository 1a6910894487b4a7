"""Q network = backbone + optional calibrator + (while searching) logits."""
from __future__ import annotations

import torch
import torch.nn as nn

from .cnn import SHARED_LAYOUT, UNIQUE_LAYOUT, CellBackbone, PlainBackbone
from .rnn import Calibrator
from .sampling import ArchitectureParams


class QNetwork(nn.Module):
    def __init__(self, backbone: nn.Module, calibrator: nn.Module | None, alpha: ArchitectureParams | None):
        super().__init__()
        self.backbone = backbone
        self.calibrator = calibrator
        self.alpha = alpha

    @property
    def searchable(self) -> bool:
        return self.alpha is not None and len(self.alpha.kinds()) > 0

    def weight_parameters(self):
        if getattr(self, "_weights_cache", None) is None:
            self._weights_cache = [p for n, p in self.named_parameters() if not n.startswith("alpha.")]
        return self._weights_cache

    def arch_parameters(self):
        return list(self.alpha.parameters()) if self.alpha is not None else []

    def _apply(self, fn, *args, **kwargs):
        # dtype/device moves may replace parameter objects
        self._weights_cache = None
        return super()._apply(fn, *args, **kwargs)

    def resolve(self, mode: str = "argmax", tau: float = 1.0, generator=None) -> dict | None:
        return self.alpha.resolve(mode, tau, generator) if self.searchable else None

    def forward(self, obs, mode: str = "argmax", tau: float = 1.0, generator=None, weights=None):
        """Return ``(calibrated Q, raw Q)``, both (B, agents, actions).

        ``weights`` (from :meth:`resolve`) pins one sampled architecture;
        otherwise a fresh one is resolved with ``mode``.
        """
        if weights is None:
            weights = self.resolve(mode, tau, generator)
        q = self.backbone(obs, weights)
        qc = self.calibrator(q, weights) if self.calibrator is not None else q
        return qc, q


def build_qnetwork(backbone: str = "searched", rnn: str = "searched", genotype=None, channels: int = 8,
                   shared_layout: str = SHARED_LAYOUT, unique_layout: str = UNIQUE_LAYOUT,
                   stem_stride: int = 1, seed: int = 0, n_agents: int = 3, n_actions: int = 8,
                   in_frames: int = 3) -> QNetwork:
    """Assemble a network.

    backbone: ``searched`` (cell supernet, or genotype-fixed cells when
    ``genotype`` is given) or ``fixed`` (plain CNN). rnn: ``none``, ``fixed``
    (BiLSTM) or ``searched`` (searched cell, genotype-fixed if given).
    """
    g = torch.Generator().manual_seed(int(seed))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        if backbone == "searched":
            bb = CellBackbone(channels, n_agents, n_actions, in_frames, shared_layout, unique_layout,
                              stem_stride, genotype if genotype is not None and genotype.cells else None)
        elif backbone == "fixed":
            bb = PlainBackbone(channels, n_agents, n_actions, in_frames, stem_stride)
        else:
            raise ValueError(f"unknown backbone {backbone!r}")
        if rnn == "none":
            cal = None
        elif rnn == "fixed":
            cal = Calibrator("lstm", n_actions)
        elif rnn == "searched":
            nodes = genotype.rnn if genotype is not None else None
            cal = Calibrator("searched", n_actions, nodes)
        else:
            raise ValueError(f"unknown rnn variant {rnn!r}")
        shapes = dict(bb.alpha_shapes())
        if cal is not None:
            shapes.update(cal.alpha_shapes())
        alpha = ArchitectureParams(shapes, generator=g) if shapes else None
    return QNetwork(bb, cal, alpha)
