"""Candidate operations for the CNN and RNN search spaces.

Convolutions are ReLU -> conv -> GroupNorm(1) without affine parameters.
A batch-independent normalizer is used instead of BatchNorm because Q
networks are queried with batch size 1 during rollouts.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

CNN_OPS = (
    "none",
    "conv_3x3",
    "conv_5x5",
    "sep_conv_3x3",
    "sep_conv_5x5",
    "dil_conv_3x3",
    "dil_conv_5x5",
    "max_pool_3x3",
    "avg_pool_3x3",
    "skip_connect",
)

RNN_OPS = ("none", "identity", "tanh", "relu", "sigmoid")


def _norm(c: int) -> nn.Module:
    return nn.GroupNorm(1, c, affine=False)


class Zero(nn.Module):
    def __init__(self, stride: int = 1):
        super().__init__()
        self.stride = stride

    def forward(self, x):
        if self.stride == 1:
            return x.mul(0.0)
        return x[:, :, ::self.stride, ::self.stride].mul(0.0)


class ReLUConvNorm(nn.Module):
    def __init__(self, c_in, c_out, k, stride, pad, dilation=1):
        super().__init__()
        self.op = nn.Sequential(
            nn.ReLU(inplace=False),
            nn.Conv2d(c_in, c_out, k, stride=stride, padding=pad, dilation=dilation, bias=False),
            _norm(c_out),
        )

    def forward(self, x):
        return self.op(x)


class SepConv(nn.Module):
    """Depthwise-separable conv, optionally dilated."""

    def __init__(self, c, k, stride, pad, dilation=1):
        super().__init__()
        self.op = nn.Sequential(
            nn.ReLU(inplace=False),
            nn.Conv2d(c, c, k, stride=stride, padding=pad, dilation=dilation, groups=c, bias=False),
            nn.Conv2d(c, c, 1, bias=False),
            _norm(c),
        )

    def forward(self, x):
        return self.op(x)


class FactorizedReduce(nn.Module):
    """Stride-2 identity surrogate: two offset 1x1 convs, concatenated."""

    def __init__(self, c_in, c_out):
        super().__init__()
        if c_out % 2:
            raise ValueError("FactorizedReduce needs an even channel count")
        self.relu = nn.ReLU(inplace=False)
        self.conv1 = nn.Conv2d(c_in, c_out // 2, 1, stride=2, bias=False)
        self.conv2 = nn.Conv2d(c_in, c_out // 2, 1, stride=2, bias=False)
        self.norm = _norm(c_out)

    def forward(self, x):
        x = self.relu(x)
        # pad right/bottom so odd sizes give ceil(H / 2) on both branches
        shifted = F.pad(x[:, :, 1:, 1:], (0, 1, 0, 1))
        return self.norm(torch.cat([self.conv1(x), self.conv2(shifted)], dim=1))


def make_op(name: str, c: int, stride: int) -> nn.Module:
    if name == "none":
        return Zero(stride)
    if name == "conv_3x3":
        return ReLUConvNorm(c, c, 3, stride, 1)
    if name == "conv_5x5":
        return ReLUConvNorm(c, c, 5, stride, 2)
    if name == "sep_conv_3x3":
        return SepConv(c, 3, stride, 1)
    if name == "sep_conv_5x5":
        return SepConv(c, 5, stride, 2)
    if name == "dil_conv_3x3":
        return SepConv(c, 3, stride, 2, dilation=2)
    if name == "dil_conv_5x5":
        return SepConv(c, 5, stride, 4, dilation=2)
    if name == "max_pool_3x3":
        return nn.MaxPool2d(3, stride=stride, padding=1)
    if name == "avg_pool_3x3":
        return nn.AvgPool2d(3, stride=stride, padding=1, count_include_pad=False)
    if name == "skip_connect":
        return nn.Identity() if stride == 1 else FactorizedReduce(c, c)
    raise ValueError(f"unknown CNN op {name!r}")


def rnn_op(name: str, x):
    if name == "none":
        return x.mul(0.0)
    if name == "identity":
        return x
    if name == "tanh":
        return torch.tanh(x)
    if name == "relu":
        return torch.relu(x)
    if name == "sigmoid":
        return torch.sigmoid(x)
    raise ValueError(f"unknown RNN op {name!r}")
