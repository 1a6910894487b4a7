"""Architecture logits and the GDAS / DARTS edge samplers."""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

SAMPLERS = ("gdas", "darts", "argmax")


def gumbel_noise(shape, generator: torch.Generator | None = None, dtype=torch.float32) -> torch.Tensor:
    u = torch.rand(shape, generator=generator, dtype=dtype)
    tiny = torch.finfo(dtype).tiny
    return -torch.log(-torch.log(u.clamp(min=tiny, max=1.0 - 1e-7)))


def gdas_sample(logits: torch.Tensor, tau: float, generator: torch.Generator | None = None,
                noise: bool | torch.Tensor = True):
    """Straight-through Gumbel-Max over the last axis.

    Returns ``(hard, index, soft)``. ``hard`` is numerically one-hot at
    ``argmax(logits + g)`` but carries the gradient of
    ``soft = softmax((logits + g) / tau)``. ``noise`` may be ``False`` (no
    noise) or an explicit Gumbel tensor.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if isinstance(noise, torch.Tensor):
        g = noise.to(logits.dtype)
    elif noise:
        g = gumbel_noise(logits.shape, generator, logits.dtype)
    else:
        g = torch.zeros_like(logits)
    soft = F.softmax((logits + g) / tau, dim=-1)
    index = torch.argmax(logits.detach() + g, dim=-1)
    one_hot = F.one_hot(index, logits.shape[-1]).to(logits.dtype)
    hard = one_hot - soft.detach() + soft
    return hard, index, soft


def darts_mix(logits: torch.Tensor) -> torch.Tensor:
    return F.softmax(logits, dim=-1)


class ArchitectureParams(nn.Module):
    """One logit vector per (cell kind, edge); kinds are keyed by name."""

    def __init__(self, shapes: dict[str, tuple[int, int]], init_scale: float = 1e-3,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.logits = nn.ParameterDict({
            k: nn.Parameter(init_scale * torch.randn(*s, generator=generator)) for k, s in shapes.items()
        })

    def kinds(self) -> list[str]:
        return list(self.logits.keys())

    def __getitem__(self, kind: str) -> torch.Tensor:
        return self.logits[kind]

    def as_numpy(self) -> dict:
        return {k: v.detach().cpu().numpy().copy() for k, v in self.logits.items()}

    def load_numpy(self, arrays: dict) -> None:
        with torch.no_grad():
            for k, v in arrays.items():
                self.logits[k].copy_(torch.as_tensor(v))

    def resolve(self, mode: str, tau: float = 1.0, generator: torch.Generator | None = None) -> dict:
        """Per kind, a list of ``(weights, index)`` per edge.

        ``index`` is None when every op must run (DARTS mixing); otherwise
        only that op executes and is scaled by ``weights[index]``.
        """
        out = {}
        for kind, a in self.logits.items():
            if mode == "gdas":
                hard, idx, _ = gdas_sample(a, tau, generator)
                out[kind] = [(hard[e], int(idx[e])) for e in range(a.shape[0])]
            elif mode == "argmax":
                idx = torch.argmax(a.detach(), dim=-1)
                one_hot = F.one_hot(idx, a.shape[-1]).to(a.dtype)
                out[kind] = [(one_hot[e], int(idx[e])) for e in range(a.shape[0])]
            elif mode == "darts":
                w = darts_mix(a)
                out[kind] = [(w[e], None) for e in range(a.shape[0])]
            else:
                raise ValueError(f"unknown sampler {mode!r}")
        return out
